use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::data::{build_samples, DataSource, Normalizer, Pipeline, Sample, TaskFilter};
use super::folds::make_folds;
use super::metrics::{auc, mean_metrics, Confusion, Metrics};
use super::report::{EvalReport, FoldReport, RunMetadata};
use super::train::{predict, train_model, TrainPolicy};
use super::HarnessError;
use crate::dsp::{ChannelSelection, StftConfig, FIXED_COLUMNS};
use crate::micronet::{BlstmConfig, CnnConfig, ModelSpec};
use crate::seed::derive_seed;
use crate::telemetry::{ExperimentPair, Group};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "cnn")]
    Cnn,
    #[serde(rename = "cnn-blstm")]
    CnnBlstm,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Cnn => "cnn",
            ModelKind::CnnBlstm => "cnn-blstm",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cnn" => Ok(ModelKind::Cnn),
            "cnn-blstm" => Ok(ModelKind::CnnBlstm),
            _ => Err(format!("unknown model {s:?} (expected cnn or cnn-blstm)")),
        }
    }
}

/// Everything that determines a cross-validation run's result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub pair: ExperimentPair,
    pub pipeline: Pipeline,
    pub model: ModelKind,
    pub channels: ChannelSelection,
    pub tasks: TaskFilter,
    pub seed: u64,
    pub folds: usize,
    pub policy: TrainPolicy,
    /// Per-channel standardization with training-fold statistics.
    pub normalize: bool,
    pub stft: StftConfig,
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub fc_hidden: usize,
    pub blstm: BlstmConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            pair: ExperimentPair::PdCtl,
            pipeline: Pipeline::Fixed,
            model: ModelKind::Cnn,
            channels: ChannelSelection::default_four(),
            tasks: TaskFilter::All,
            seed: 0,
            folds: 10,
            policy: TrainPolicy::default(),
            normalize: false,
            stft: StftConfig::default(),
            conv1_filters: 32,
            conv2_filters: 64,
            fc_hidden: 128,
            blstm: BlstmConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.model == ModelKind::CnnBlstm && self.pipeline == Pipeline::Fixed {
            return Err(HarnessError::InvalidConfig(
                "cnn-blstm runs only on the frames pipeline".into(),
            ));
        }
        if self.folds < 3 {
            return Err(HarnessError::InvalidConfig(format!(
                "{} folds; need at least 3",
                self.folds
            )));
        }
        if let Some(w) = self.pipeline.window() {
            w.columns(self.stft.column_duration_s())?;
        }
        self.stft.validate()?;
        self.policy.validate()
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn model_spec(&self, in_width: usize) -> ModelSpec {
        let cnn = CnnConfig {
            in_channels: self.channels.len(),
            in_height: self.stft.bins(),
            in_width,
            conv1_filters: self.conv1_filters,
            conv2_filters: self.conv2_filters,
            kernel: 3,
            fc_hidden: self.fc_hidden,
            n_classes: 2,
        };
        match self.model {
            ModelKind::Cnn => ModelSpec::cnn(cnn),
            ModelKind::CnnBlstm => ModelSpec::cnn_blstm(cnn, self.blstm),
        }
    }

    /// Column cap when loading spectrograms for this pipeline.
    pub fn max_cols(&self) -> Option<usize> {
        match self.pipeline {
            Pipeline::Fixed => Some(FIXED_COLUMNS),
            Pipeline::Frames(_) => None,
        }
    }

    pub fn metadata(&self) -> RunMetadata {
        RunMetadata {
            seed: self.seed,
            config_hash: self.hash(),
            pair: self.pair,
            pipeline: self.pipeline.name().to_string(),
            model: self.model,
            channels: self.channels.to_string(),
            window: self.pipeline.window().map(|w| w.to_string()),
            task_filter: self.tasks.to_string(),
            folds: self.folds,
            normalize: self.normalize,
            policy: self.policy.clone(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

/// Loads the data for `cfg` and runs cross-validation on it.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    source: &DataSource,
    jobs: usize,
) -> Result<EvalReport, HarnessError> {
    cfg.validate()?;
    let source = DataSource {
        stft: cfg.stft.clone(),
        ..source.clone()
    };
    let records = source.load(cfg.pair, cfg.tasks, &cfg.channels, cfg.max_cols())?;
    if records.is_empty() {
        return Err(HarnessError::EmptyTaskSubset(cfg.tasks.to_string()));
    }
    let samples = build_samples(&records, cfg.pair, cfg.pipeline)?;
    cross_validate(cfg, &samples, jobs)
}

/// K-fold cross-validation with subject-level folds. Folds run on up to
/// `jobs` threads; results do not depend on `jobs`.
pub fn cross_validate(
    cfg: &ExperimentConfig,
    samples: &[Sample],
    jobs: usize,
) -> Result<EvalReport, HarnessError> {
    cfg.validate()?;
    let samples: Vec<&Sample> = samples
        .iter()
        .filter(|s| cfg.tasks.accepts(s.task))
        .collect();
    if samples.is_empty() {
        return Err(HarnessError::EmptyTaskSubset(cfg.tasks.to_string()));
    }
    let shape = samples[0].inputs.first().map(|t| t.shape().to_vec());
    if samples
        .iter()
        .any(|s| s.inputs.is_empty() || Some(s.inputs[0].shape().to_vec()) != shape)
    {
        return Err(HarnessError::InvalidConfig(
            "samples must share one input shape".into(),
        ));
    }
    let shape = shape.expect("non-empty");
    if shape[0] != cfg.channels.len() {
        return Err(HarnessError::InvalidConfig(format!(
            "samples have {} channels, config selects {}",
            shape[0],
            cfg.channels.len()
        )));
    }
    let spec = cfg.model_spec(shape[2]);
    spec.cnn.shape_trace()?;

    let mut subjects: BTreeMap<&str, Group> = BTreeMap::new();
    for s in &samples {
        subjects.insert(&s.subject_id, s.group);
    }
    let subject_list: Vec<(String, Group)> = subjects
        .iter()
        .map(|(id, g)| (id.to_string(), *g))
        .collect();
    let plan = make_folds(&subject_list, cfg.folds, cfg.seed)?;

    let run_fold = |k: usize| -> Result<FoldReport, HarnessError> {
        let split = plan.split(k);
        split.check_disjoint()?;
        let pick = |ids: &[String]| -> Vec<&Sample> {
            let set: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
            samples
                .iter()
                .copied()
                .filter(|s| set.contains(s.subject_id.as_str()))
                .collect()
        };
        let (train, val, test) = (pick(&split.train), pick(&split.val), pick(&split.test));
        if train.len() + val.len() + test.len() != samples.len() {
            return Err(HarnessError::Leakage(vec![format!(
                "fold {k}: samples not partitioned"
            )]));
        }
        if test.is_empty() {
            return Err(HarnessError::EmptyTestSet(k));
        }
        let seed = derive_seed(cfg.seed, &[k as u64]);
        let (model, curve, preds) = if cfg.normalize {
            let norm = Normalizer::fit(&train);
            let owned = |v: &[&Sample]| -> Vec<Sample> { v.iter().map(|s| norm.apply(s)).collect() };
            let (tr, va, te) = (owned(&train), owned(&val), owned(&test));
            let (tr, va, te): (Vec<&Sample>, Vec<&Sample>, Vec<&Sample>) =
                (tr.iter().collect(), va.iter().collect(), te.iter().collect());
            let (model, curve) = train_model(spec.clone(), &tr, &va, &cfg.policy, seed)?;
            let preds = predict(&model, &te)?;
            (model, curve, preds)
        } else {
            let (model, curve) = train_model(spec.clone(), &train, &val, &cfg.policy, seed)?;
            let preds = predict(&model, &test)?;
            (model, curve, preds)
        };
        drop(model);
        let labels: Vec<usize> = preds.iter().map(|p| p.label).collect();
        let scores: Vec<f64> = preds.iter().map(|p| p.score).collect();
        let decisions: Vec<usize> = preds.iter().map(|p| p.pred).collect();
        Ok(FoldReport {
            fold: k,
            val_fold: split.val_fold,
            train_subjects: split.train.len(),
            val_subjects: split.val.len(),
            test_subjects: split.test.clone(),
            n_train: train.len(),
            n_val: val.len(),
            n_test: test.len(),
            metrics: Metrics::from_scores(&labels, &scores, &decisions),
            curve,
            predictions: preds,
        })
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
    let folds: Vec<FoldReport> = pool.install(|| {
        (0..cfg.folds)
            .into_par_iter()
            .map(run_fold)
            .collect::<Result<Vec<_>, _>>()
    })?;

    let mut pooled_conf = Confusion::default();
    let (mut labels, mut scores) = (Vec::new(), Vec::new());
    for f in &folds {
        pooled_conf.add(&f.metrics.confusion);
        for p in &f.predictions {
            labels.push(p.label);
            scores.push(p.score);
        }
    }
    let fold_metrics: Vec<Metrics> = folds.iter().map(|f| f.metrics).collect();
    Ok(EvalReport {
        metadata: cfg.metadata(),
        model_description: spec.describe(),
        n_subjects: subject_list.len(),
        n_samples: samples.len(),
        pooled: Metrics::from_confusion(pooled_conf, auc(&labels, &scores)),
        fold_mean: mean_metrics(&fold_metrics),
        folds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::FrameWindow;

    #[test]
    fn blstm_needs_frames() {
        let cfg = ExperimentConfig {
            model: ModelKind::CnnBlstm,
            ..ExperimentConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(HarnessError::InvalidConfig(_))));
        let ok = ExperimentConfig {
            pipeline: Pipeline::Frames(FrameWindow::Milliseconds(1000.0)),
            ..cfg
        };
        ok.validate().unwrap();
    }

    #[test]
    fn hash_tracks_config() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            seed: 1,
            ..ExperimentConfig::default()
        };
        assert_eq!(a.hash(), ExperimentConfig::default().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn three_channel_model_params() {
        let cfg = ExperimentConfig {
            channels: "vx,vy,p".parse().unwrap(),
            ..ExperimentConfig::default()
        };
        let spec = cfg.model_spec(65);
        assert_eq!(spec.cnn.conv1_params(), (3 * 9 + 1) * 32);
        assert_eq!(spec.cnn.conv1_params(), 896);
    }
}
