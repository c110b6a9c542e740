//! Two-stage training, task construction, cross-validation, metrics,
//! paired statistics, the normalisation-shift report and run configuration.

mod config;
mod cv;
mod metrics;
mod preprocess;
mod shift;
mod stats;
mod tasks;
mod train;

pub use config::{CrossvalSection, RunConfig, SchemeName, TaskSection};
pub use cv::{crossval, CrossvalConfig, CrossvalReport, FoldPlan, FoldScheme};
pub use metrics::{compute_metrics, Metrics, MetricsReport, Summary};
pub use preprocess::{preprocess_dataset, PreprocessConfig};
pub use shift::{normalization_shift, ShiftReport};
pub use stats::{wilcoxon_signed_rank, PValueMethod, WilcoxonResult, EXACT_MAX_N};
pub use tasks::{build_task, TaskId, TaskOptions, TaskSample, TaskSet};
pub use train::{
    embed, fit_task, fit_unimodal, predict, train_alignment, train_task, unimodal_head, AlignData, ModelKind,
    TrainConfig, TrainOutcome,
};

use thiserror::Error;

use crate::dsp::DspError;
use crate::model::ModelError;
use crate::saliency::SaliencyError;
use crate::signalio::SignalIoError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("fold plan error: {0}")]
    Plan(String),
    #[error("unknown {kind} `{name}`")]
    Lookup { kind: &'static str, name: String },
    #[error("training diverged in {stage} at step {step}: loss is not finite")]
    Divergence { stage: &'static str, step: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    SignalIo(#[from] SignalIoError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Saliency(#[from] SaliencyError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<crate::diffcore::DiffError> for HarnessError {
    fn from(e: crate::diffcore::DiffError) -> Self {
        Self::Model(ModelError::Diff(e))
    }
}

impl HarnessError {
    /// Process exit status for the command-line tool: 2 for configuration
    /// and lookup problems, 3 for data problems, 4 for divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Lookup { .. } => 2,
            Self::SignalIo(SignalIoError::Config { .. }) => 2,
            Self::Divergence { .. } => 4,
            _ => 3,
        }
    }
}
