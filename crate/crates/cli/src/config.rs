//! Run configuration: a TOML file of flat dotted keys, the
//! `GRAPHOCOG_CACHE` environment variable, then command-line flags, each
//! layer overriding the previous one.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use graphocog::dsp::{sweep_channel_combinations, ChannelSelection, FrameWindow};
use graphocog::harness::{ExperimentConfig, ModelKind, Pipeline, PlateauReduction, TaskFilter};
use graphocog::synth::CohortSpec;
use graphocog::telemetry::ExperimentPair;

use crate::error::CliError;

pub const CACHE_ENV: &str = "GRAPHOCOG_CACHE";

/// Frame width used when the frames pipeline is chosen without a window.
pub const DEFAULT_WINDOW: &str = "1s";

pub const KEYS: &[&str] = &[
    "pair",
    "pipeline",
    "model",
    "channels",
    "window",
    "task",
    "seed",
    "jobs",
    "folds",
    "normalize",
    "paths.manifest",
    "paths.cache",
    "paths.out",
    "train.lr",
    "train.reduction",
    "train.factor",
    "train.sched_patience",
    "train.min_delta",
    "train.stop_patience",
    "train.max_epochs",
    "train.batch_size",
    "synth.seed",
    "synth.ctl",
    "synth.pd",
    "synth.pdm",
    "synth.ad",
    "synth.amplitude",
    "synth.min_duration_s",
    "synth.max_duration_s",
    "sweep.windows",
    "sweep.models",
    "sweep.channels",
];

/// Flags shared by every subcommand. Each config key has a flag of the
/// same name.
#[derive(Debug, Clone, Default, Args)]
pub struct Opts {
    /// Config file (TOML, flat dotted keys)
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// ad-ctl, pd-ctl or pd-pdm
    #[arg(long)]
    pub pair: Option<String>,
    /// fixed or frames
    #[arg(long)]
    pub pipeline: Option<String>,
    /// cnn or cnn-blstm
    #[arg(long)]
    pub model: Option<String>,
    /// Comma list, e.g. vx,vy,speed,traj
    #[arg(long)]
    pub channels: Option<String>,
    /// Frame width: 1s, 500ms or cols:2
    #[arg(long)]
    pub window: Option<String>,
    /// all, a task name or a task family
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// Worker threads (default: folds, capped at hardware threads)
    #[arg(long)]
    pub jobs: Option<String>,
    #[arg(long)]
    pub folds: Option<String>,
    #[arg(long)]
    pub normalize: Option<String>,
    #[arg(long = "paths.manifest", visible_alias = "manifest", value_name = "PATH")]
    pub manifest: Option<String>,
    #[arg(long = "paths.cache", visible_alias = "cache", value_name = "DIR")]
    pub cache: Option<String>,
    #[arg(long = "paths.out", visible_alias = "out", value_name = "DIR")]
    pub out: Option<String>,
    #[arg(long = "train.lr", hide = true)]
    pub train_lr: Option<String>,
    #[arg(long = "train.reduction", hide = true)]
    pub train_reduction: Option<String>,
    #[arg(long = "train.factor", hide = true)]
    pub train_factor: Option<String>,
    #[arg(long = "train.sched_patience", hide = true)]
    pub train_sched_patience: Option<String>,
    #[arg(long = "train.min_delta", hide = true)]
    pub train_min_delta: Option<String>,
    #[arg(long = "train.stop_patience", hide = true)]
    pub train_stop_patience: Option<String>,
    #[arg(long = "train.max_epochs", hide = true)]
    pub train_max_epochs: Option<String>,
    #[arg(long = "train.batch_size", hide = true)]
    pub train_batch_size: Option<String>,
    #[arg(long = "synth.seed", hide = true)]
    pub synth_seed: Option<String>,
    #[arg(long = "synth.ctl", hide = true)]
    pub synth_ctl: Option<String>,
    #[arg(long = "synth.pd", hide = true)]
    pub synth_pd: Option<String>,
    #[arg(long = "synth.pdm", hide = true)]
    pub synth_pdm: Option<String>,
    #[arg(long = "synth.ad", hide = true)]
    pub synth_ad: Option<String>,
    #[arg(long = "synth.amplitude", hide = true)]
    pub synth_amplitude: Option<String>,
    #[arg(long = "synth.min_duration_s", hide = true)]
    pub synth_min_duration_s: Option<String>,
    #[arg(long = "synth.max_duration_s", hide = true)]
    pub synth_max_duration_s: Option<String>,
    #[arg(long = "sweep.windows", hide = true)]
    pub sweep_windows: Option<String>,
    #[arg(long = "sweep.models", hide = true)]
    pub sweep_models: Option<String>,
    #[arg(long = "sweep.channels", hide = true)]
    pub sweep_channels: Option<String>,
}

impl Opts {
    fn flag_values(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("pair", &self.pair),
            ("pipeline", &self.pipeline),
            ("model", &self.model),
            ("channels", &self.channels),
            ("window", &self.window),
            ("task", &self.task),
            ("seed", &self.seed),
            ("jobs", &self.jobs),
            ("folds", &self.folds),
            ("normalize", &self.normalize),
            ("paths.manifest", &self.manifest),
            ("paths.cache", &self.cache),
            ("paths.out", &self.out),
            ("train.lr", &self.train_lr),
            ("train.reduction", &self.train_reduction),
            ("train.factor", &self.train_factor),
            ("train.sched_patience", &self.train_sched_patience),
            ("train.min_delta", &self.train_min_delta),
            ("train.stop_patience", &self.train_stop_patience),
            ("train.max_epochs", &self.train_max_epochs),
            ("train.batch_size", &self.train_batch_size),
            ("synth.seed", &self.synth_seed),
            ("synth.ctl", &self.synth_ctl),
            ("synth.pd", &self.synth_pd),
            ("synth.pdm", &self.synth_pdm),
            ("synth.ad", &self.synth_ad),
            ("synth.amplitude", &self.synth_amplitude),
            ("synth.min_duration_s", &self.synth_min_duration_s),
            ("synth.max_duration_s", &self.synth_max_duration_s),
            ("sweep.windows", &self.sweep_windows),
            ("sweep.models", &self.sweep_models),
            ("sweep.channels", &self.sweep_channels),
        ]
    }

    /// Merged key/value map: file, then environment, then flags.
    pub fn layered(&self, env_cache: Option<String>) -> Result<BTreeMap<String, String>, CliError> {
        let mut values = match &self.config {
            Some(path) => read_config_file(path)?,
            None => BTreeMap::new(),
        };
        if let Some(dir) = env_cache.filter(|d| !d.is_empty()) {
            values.insert("paths.cache".into(), dir);
        }
        for (key, v) in self.flag_values() {
            if let Some(v) = v {
                values.insert(key.to_string(), v.clone());
            }
        }
        Ok(values)
    }
}

pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("config {}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| CliError::config(format!("config {}: {e}", path.display())))
}

/// Flattens a TOML document into dotted keys. Arrays become `;`-joined
/// strings.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, String> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| e.to_string())?;
    let mut out = BTreeMap::new();
    flatten("", &table, &mut out)?;
    for key in out.keys() {
        if !KEYS.contains(&key.as_str()) {
            return Err(format!("unknown key {key:?}"));
        }
    }
    Ok(out)
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, String>) -> Result<(), String> {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out)?,
            other => {
                out.insert(key.clone(), scalar(&key, other)?);
            }
        }
    }
    Ok(())
}

fn scalar(key: &str, v: &toml::Value) -> Result<String, String> {
    Ok(match v {
        toml::Value::String(s) => s.clone(),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::Float(f) => f.to_string(),
        toml::Value::Boolean(b) => b.to_string(),
        toml::Value::Array(items) => items
            .iter()
            .map(|i| scalar(key, i))
            .collect::<Result<Vec<_>, _>>()?
            .join(";"),
        _ => return Err(format!("unsupported value for {key}")),
    })
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    pub pipeline_explicit: bool,
    pub manifest: Option<PathBuf>,
    pub cache_dir: PathBuf,
    pub out_dir: PathBuf,
    pub jobs: usize,
    pub cohort: CohortSpec,
    pub sweep_windows: Vec<FrameWindow>,
    pub sweep_models: Vec<ModelKind>,
    pub sweep_channels: Vec<ChannelSelection>,
}

fn get<T: FromStr>(values: &BTreeMap<String, String>, key: &str) -> Result<Option<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    values
        .get(key)
        .map(|v| {
            v.trim()
                .parse::<T>()
                .map_err(|e| CliError::config(format!("{key} = {v:?}: {e}")))
        })
        .transpose()
}

fn list<T: FromStr>(raw: &str, key: &str, seps: &[char]) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    raw.split(seps)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|e| CliError::config(format!("{key}: {s:?}: {e}")))
        })
        .collect()
}

fn hardware_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

impl RunConfig {
    pub fn resolve(values: &BTreeMap<String, String>) -> Result<Self, CliError> {
        let mut exp = ExperimentConfig::default();
        if let Some(p) = get::<ExperimentPair>(values, "pair")? {
            exp.pair = p;
        }
        let model: Option<ModelKind> = get(values, "model")?;
        if let Some(m) = model {
            exp.model = m;
        }
        if let Some(c) = get::<ChannelSelection>(values, "channels")? {
            exp.channels = c;
        }
        if let Some(t) = get::<TaskFilter>(values, "task")? {
            exp.tasks = t;
        }
        if let Some(s) = get(values, "seed")? {
            exp.seed = s;
        }
        if let Some(f) = get(values, "folds")? {
            exp.folds = f;
        }
        if let Some(n) = get(values, "normalize")? {
            exp.normalize = n;
        }

        let pipeline: Option<String> = get(values, "pipeline")?;
        let window: Option<FrameWindow> = get(values, "window")?;
        exp.pipeline = match (pipeline.as_deref(), window) {
            (Some("fixed"), Some(_)) => {
                return Err(CliError::config("the fixed pipeline takes no window"))
            }
            (Some("fixed"), None) => Pipeline::Fixed,
            (Some("frames") | None, Some(w)) => Pipeline::Frames(w),
            (Some("frames"), None) => Pipeline::Frames(DEFAULT_WINDOW.parse().expect("valid")),
            (None, None) if exp.model == ModelKind::CnnBlstm => {
                Pipeline::Frames(DEFAULT_WINDOW.parse().expect("valid"))
            }
            (None, None) => Pipeline::Fixed,
            (Some(other), _) => {
                return Err(CliError::config(format!(
                    "pipeline = {other:?}: expected fixed or frames"
                )))
            }
        };

        let policy = &mut exp.policy;
        if let Some(v) = get(values, "train.lr")? {
            policy.lr = v;
        }
        if let Some(v) = get::<String>(values, "train.reduction")? {
            policy.reduction = match v.as_str() {
                "multiply" => PlateauReduction::Multiply,
                "subtract" => PlateauReduction::Subtract,
                _ => {
                    return Err(CliError::config(format!(
                        "train.reduction = {v:?}: expected multiply or subtract"
                    )))
                }
            };
        }
        if let Some(v) = get(values, "train.factor")? {
            policy.factor = v;
        }
        if let Some(v) = get(values, "train.sched_patience")? {
            policy.sched_patience = v;
        }
        if let Some(v) = get(values, "train.min_delta")? {
            policy.min_delta = v;
        }
        if let Some(v) = get(values, "train.stop_patience")? {
            policy.stop_patience = v;
        }
        if let Some(v) = get(values, "train.max_epochs")? {
            policy.max_epochs = v;
        }
        if let Some(v) = get(values, "train.batch_size")? {
            policy.batch_size = v;
        }

        let jobs = match get::<usize>(values, "jobs")? {
            Some(0) => return Err(CliError::config("jobs must be at least 1")),
            Some(j) => j,
            None => exp.folds.min(hardware_threads()).max(1),
        };

        let mut cohort = CohortSpec {
            seed: exp.seed,
            ..CohortSpec::default()
        };
        if let Some(v) = get(values, "synth.seed")? {
            cohort.seed = v;
        }
        for (key, slot) in [
            ("synth.ctl", &mut cohort.ctl),
            ("synth.pd", &mut cohort.pd),
            ("synth.pdm", &mut cohort.pdm),
            ("synth.ad", &mut cohort.ad),
        ] {
            if let Some(v) = get(values, key)? {
                *slot = v;
            }
        }
        if let Some(k) = get::<f64>(values, "synth.amplitude")? {
            if !(k.is_finite() && k >= 0.0) {
                return Err(CliError::config("synth.amplitude must be a finite value ≥ 0"));
            }
            cohort.signature = cohort.signature.scaled(k);
        }
        if let Some(v) = get(values, "synth.min_duration_s")? {
            cohort.duration_s.0 = v;
        }
        if let Some(v) = get(values, "synth.max_duration_s")? {
            cohort.duration_s.1 = v;
        }

        let sweep_windows = match values.get("sweep.windows") {
            Some(raw) => list(raw, "sweep.windows", &[',', ';'])?,
            None => FrameWindow::sweep_defaults(),
        };
        let sweep_models = match values.get("sweep.models") {
            Some(raw) => list(raw, "sweep.models", &[',', ';'])?,
            None => match model {
                Some(m) => vec![m],
                None => vec![ModelKind::Cnn, ModelKind::CnnBlstm],
            },
        };
        let sweep_channels = match values.get("sweep.channels") {
            Some(raw) => list(raw, "sweep.channels", &[';'])?,
            None => sweep_channel_combinations(),
        };

        let out_dir = values
            .get("paths.out")
            .map_or_else(|| PathBuf::from("graphocog-out"), PathBuf::from);
        let cache_dir = values
            .get("paths.cache")
            .map_or_else(|| out_dir.join("cache"), PathBuf::from);

        let cfg = RunConfig {
            experiment: exp,
            pipeline_explicit: pipeline.is_some(),
            manifest: values.get("paths.manifest").map(PathBuf::from),
            cache_dir,
            out_dir,
            jobs,
            cohort,
            sweep_windows,
            sweep_models,
            sweep_channels,
        };
        cfg.experiment.validate()?;
        Ok(cfg)
    }
}
