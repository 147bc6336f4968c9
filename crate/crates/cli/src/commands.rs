use std::fs;
use std::io::Read;
use std::path::Path;
use std::time::Instant;

use graphocog::dsp::FIXED_COLUMNS;
use graphocog::harness::{
    format_table, run_experiment, sweep_channels, sweep_tasks, sweep_windows, DataSource,
    EvalReport, ExperimentConfig, Pipeline, SpecRecord, SweepReport,
};
use graphocog::synth::generate_cohort;
use graphocog::telemetry::{load_manifest, Manifest};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

/// SHA-256 over the manifest file followed by every recording it lists,
/// in manifest order.
pub fn manifest_hash(path: &Path, manifest: &Manifest) -> Result<String, CliError> {
    let mut h = Sha256::new();
    let mut feed = |p: &Path| -> Result<(), CliError> {
        let mut f = fs::File::open(p).map_err(|e| CliError::io(format!("{}: {e}", p.display())))?;
        let mut buf = Vec::new();
        f.read_to_end(&mut buf)
            .map_err(|e| CliError::io(format!("{}: {e}", p.display())))?;
        h.update((buf.len() as u64).to_le_bytes());
        h.update(&buf);
        Ok(())
    };
    feed(path)?;
    for e in &manifest.entries {
        feed(&e.path)?;
    }
    Ok(hex::encode(h.finalize()))
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<(), CliError> {
    let files = generate_cohort(&cfg.cohort, &cfg.out_dir)?;
    let hash = manifest_hash(&files.manifest_path, &files.manifest)?;
    println!("manifest       {}", files.manifest_path.display());
    println!("subjects       {}", cfg.cohort.total_subjects());
    println!("recordings     {}", files.manifest.len());
    println!("manifest hash  {hash}");
    Ok(())
}

fn open_manifest(cfg: &RunConfig) -> Result<(Manifest, String), CliError> {
    let path = cfg.manifest.as_ref().ok_or_else(|| {
        CliError::config("no manifest given; pass --manifest or set paths.manifest")
    })?;
    let manifest = load_manifest(path)?;
    if manifest.is_empty() {
        return Err(CliError::data(format!("{}: manifest lists no recordings", path.display())));
    }
    let hash = manifest_hash(path, &manifest)?;
    Ok((manifest, hash))
}

fn data_source(cfg: &RunConfig, manifest: Manifest) -> DataSource {
    DataSource {
        stft: cfg.experiment.stft.clone(),
        ..DataSource::from_manifest(manifest, Some(cfg.cache_dir.clone()))
    }
}

fn span(lo: usize, hi: usize) -> String {
    if lo == hi {
        lo.to_string()
    } else {
        format!("{lo}–{hi}")
    }
}

/// Per-channel and model-input shape lines for a set of spectrograms.
pub fn shape_summary(records: &[SpecRecord], pipeline: Pipeline) -> Result<Vec<String>, CliError> {
    let first = records
        .first()
        .ok_or_else(|| CliError::data("no recordings matched the task filter"))?;
    let cols = |r: &SpecRecord| r.ms.cols;
    let lo = records.iter().map(cols).min().expect("non-empty");
    let hi = records.iter().map(cols).max().expect("non-empty");
    let c = first.ms.channels.len();
    let bins = first.ms.bins;
    let mut lines: Vec<String> = first
        .ms
        .channels
        .iter()
        .map(|ch| format!("  {:<6} {bins}×{} columns", ch.as_str(), span(lo, hi)))
        .collect();
    match pipeline {
        Pipeline::Fixed => lines.push(format!("  fixed-size input {c}×{bins}×{FIXED_COLUMNS}")),
        Pipeline::Frames(w) => {
            let width = w
                .columns(first.ms.column_duration_s)
                .map_err(|e| CliError::config(e.to_string()))?;
            lines.push(format!(
                "  frames ({w} = {width} columns) {c}×{bins}×{width}, {} frames per recording",
                span(lo.div_ceil(width), hi.div_ceil(width))
            ));
        }
    }
    Ok(lines)
}

pub fn cmd_preprocess(cfg: &RunConfig) -> Result<(), CliError> {
    let (manifest, hash) = open_manifest(cfg)?;
    println!("manifest hash  {hash}");
    let exp = &cfg.experiment;
    let source = data_source(cfg, manifest);
    let records = source.load_all(exp.tasks, &exp.channels, None)?;
    println!(
        "cached {} recording(s) in {}",
        records.len(),
        cfg.cache_dir.display()
    );
    println!("channels {}", exp.channels);
    for line in shape_summary(&records, exp.pipeline)? {
        println!("{line}");
    }
    Ok(())
}

fn print_metadata(exp: &ExperimentConfig, manifest_hash: &str, jobs: usize) {
    let meta = exp.metadata();
    println!("config hash    {}", meta.config_hash);
    println!("seed           {}", meta.seed);
    println!("code version   {}", meta.code_version);
    println!("manifest hash  {manifest_hash}");
    eprintln!("jobs           {jobs}");
}

fn write_report(dir: &Path, name: &str, json: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, json).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    println!("report         {}", path.display());
    Ok(())
}

pub fn run_label(exp: &ExperimentConfig) -> String {
    let pipeline = match exp.pipeline.window() {
        Some(w) => format!("frames {w}"),
        None => "fixed".into(),
    };
    format!("{} {pipeline} {} {{{}}}", exp.pair, exp.model, exp.channels)
}

pub fn cmd_run(cfg: &RunConfig) -> Result<(), CliError> {
    let (manifest, hash) = open_manifest(cfg)?;
    let exp = &cfg.experiment;
    print_metadata(exp, &hash, cfg.jobs);
    let started = Instant::now();
    let report: EvalReport = run_experiment(exp, &data_source(cfg, manifest), cfg.jobs)?;
    eprintln!("finished in {:.1} s", started.elapsed().as_secs_f64());
    write_report(&cfg.out_dir, "report.json", &report.to_json())?;
    println!();
    print!("{}", format_table(&[(run_label(exp), &report.pooled)]));
    Ok(())
}

fn finish_sweep(cfg: &RunConfig, name: &str, report: &SweepReport, started: Instant) -> Result<(), CliError> {
    eprintln!("finished in {:.1} s", started.elapsed().as_secs_f64());
    write_report(&cfg.out_dir, &format!("{name}.json"), &report.to_json())?;
    println!();
    print!("{}", report.table());
    Ok(())
}

pub fn cmd_sweep_windows(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.pipeline_explicit && cfg.experiment.pipeline == Pipeline::Fixed {
        return Err(CliError::config("the window sweep runs on the frames pipeline"));
    }
    let (manifest, hash) = open_manifest(cfg)?;
    print_metadata(&cfg.experiment, &hash, cfg.jobs);
    let started = Instant::now();
    let report = sweep_windows(
        &cfg.experiment,
        &data_source(cfg, manifest),
        &cfg.sweep_windows,
        &cfg.sweep_models,
        cfg.jobs,
    )?;
    finish_sweep(cfg, "sweep-windows", &report, started)
}

pub fn cmd_sweep_channels(cfg: &RunConfig) -> Result<(), CliError> {
    let (manifest, hash) = open_manifest(cfg)?;
    print_metadata(&cfg.experiment, &hash, cfg.jobs);
    let started = Instant::now();
    let report = sweep_channels(
        &cfg.experiment,
        &data_source(cfg, manifest),
        &cfg.sweep_channels,
        cfg.jobs,
    )?;
    finish_sweep(cfg, "sweep-channels", &report, started)
}

pub fn cmd_sweep_tasks(cfg: &RunConfig) -> Result<(), CliError> {
    let (manifest, hash) = open_manifest(cfg)?;
    print_metadata(&cfg.experiment, &hash, cfg.jobs);
    let started = Instant::now();
    let report = sweep_tasks(&cfg.experiment, &data_source(cfg, manifest), cfg.jobs)?;
    finish_sweep(cfg, "sweep-tasks", &report, started)
}
