use std::collections::HashSet;

use super::cv::{cross_validate, ExperimentConfig, ModelKind};
use super::data::{build_samples, DataSource, Pipeline, TaskFilter};
use super::report::{SweepReport, SweepRow};
use super::HarnessError;
use crate::dsp::{ChannelSelection, FrameWindow, FIXED_COLUMNS};

fn with_stft(cfg: &ExperimentConfig, source: &DataSource) -> DataSource {
    DataSource {
        stft: cfg.stft.clone(),
        ..source.clone()
    }
}

/// One row per (model, window), models outermost.
pub fn sweep_windows(
    base: &ExperimentConfig,
    source: &DataSource,
    windows: &[FrameWindow],
    models: &[ModelKind],
    jobs: usize,
) -> Result<SweepReport, HarnessError> {
    if windows.is_empty() || models.is_empty() {
        return Err(HarnessError::InvalidConfig("window sweep needs windows and models".into()));
    }
    let source = with_stft(base, source);
    let records = source.load(base.pair, base.tasks, &base.channels, None)?;
    if records.is_empty() {
        return Err(HarnessError::EmptyTaskSubset(base.tasks.to_string()));
    }
    let mut rows = Vec::with_capacity(windows.len() * models.len());
    for &model in models {
        for &w in windows {
            let cfg = ExperimentConfig {
                model,
                pipeline: Pipeline::Frames(w),
                ..base.clone()
            };
            cfg.validate()?;
            let samples = build_samples(&records, cfg.pair, cfg.pipeline)?;
            rows.push(SweepRow {
                label: format!("{model} @ {w}"),
                report: cross_validate(&cfg, &samples, jobs)?,
            });
        }
    }
    Ok(SweepReport::new("windows", rows))
}

/// One row per channel combination on the fixed-size CNN.
pub fn sweep_channels(
    base: &ExperimentConfig,
    source: &DataSource,
    combos: &[ChannelSelection],
    jobs: usize,
) -> Result<SweepReport, HarnessError> {
    let mut seen = HashSet::new();
    for c in combos {
        if !seen.insert(c) {
            return Err(HarnessError::DuplicateCombination(format!("{{{c}}}")));
        }
    }
    if base.pipeline != Pipeline::Fixed || base.model != ModelKind::Cnn {
        return Err(HarnessError::InvalidConfig(
            "channel sweep runs the CNN on the fixed pipeline".into(),
        ));
    }
    let source = with_stft(base, source);
    let mut rows = Vec::with_capacity(combos.len());
    for combo in combos {
        let cfg = ExperimentConfig {
            channels: combo.clone(),
            ..base.clone()
        };
        let records = source.load(cfg.pair, cfg.tasks, combo, Some(FIXED_COLUMNS))?;
        if records.is_empty() {
            return Err(HarnessError::EmptyTaskSubset(cfg.tasks.to_string()));
        }
        let samples = build_samples(&records, cfg.pair, cfg.pipeline)?;
        rows.push(SweepRow {
            label: format!("{{{combo}}}"),
            report: cross_validate(&cfg, &samples, jobs)?,
        });
    }
    Ok(SweepReport::new("channels", rows))
}

/// One row per task and per task family, each trained and evaluated on
/// that subset only. Fails before training if any subset is empty.
pub fn sweep_tasks(
    base: &ExperimentConfig,
    source: &DataSource,
    jobs: usize,
) -> Result<SweepReport, HarnessError> {
    base.validate()?;
    let source = with_stft(base, source);
    let records = source.load(base.pair, TaskFilter::All, &base.channels, base.max_cols())?;
    let samples = build_samples(&records, base.pair, base.pipeline)?;
    let filters = TaskFilter::sweep_rows();
    for f in &filters {
        if !samples.iter().any(|s| f.accepts(s.task)) {
            return Err(HarnessError::EmptyTaskSubset(f.to_string()));
        }
    }
    let mut rows = Vec::with_capacity(filters.len());
    for f in filters {
        let cfg = ExperimentConfig {
            tasks: f,
            ..base.clone()
        };
        rows.push(SweepRow {
            label: f.to_string(),
            report: cross_validate(&cfg, &samples, jobs)?,
        });
    }
    Ok(SweepReport::new("tasks", rows))
}
