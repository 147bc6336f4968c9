//! Patient-grouped cross-validation, training, metrics and the three
//! experiment sweeps.

pub mod cv;
pub mod data;
pub mod folds;
pub mod metrics;
pub mod report;
pub mod sweep;
pub mod train;

pub use cv::{cross_validate, run_experiment, ExperimentConfig, ModelKind};
pub use data::{build_samples, DataSource, Normalizer, Pipeline, Sample, SpecRecord, TaskFilter};
pub use folds::{make_folds, FoldPlan, Split};
pub use metrics::{auc, f1_from, Confusion, Metrics};
pub use report::{format_table, EvalReport, FoldReport, RunMetadata, SweepReport, SweepRow};
pub use sweep::{sweep_channels, sweep_tasks, sweep_windows};
pub use train::{
    predict, train_model, EpochLog, PlateauReduction, Prediction, TrainCurve, TrainPolicy,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("too few subjects: need at least {needed}, found {found}")]
    TooFewSubjects { needed: usize, found: usize },
    #[error("empty test set in fold {0}")]
    EmptyTestSet(usize),
    #[error("no recordings for task subset {0}")]
    EmptyTaskSubset(String),
    #[error("channel combination {0} listed more than once")]
    DuplicateCombination(String),
    #[error("subjects shared between train/validation/test: {0:?}")]
    Leakage(Vec<String>),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{} recording(s) failed: {}", .0.len(), .0.join("; "))]
    Data(Vec<String>),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Net(#[from] crate::micronet::NetError),
    #[error(transparent)]
    Dsp(#[from] crate::dsp::DspError),
}
