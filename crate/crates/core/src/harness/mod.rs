//! Experiment orchestration: configuration, training loop, logs and
//! presets.

mod config;
mod format;
mod learned;
mod presets;
mod run;
pub mod verify;

use std::path::PathBuf;

use thiserror::Error;

use crate::coherence::CoherenceError;
use crate::dataset::DatasetError;
use crate::net::NetError;
use crate::optimizer::OptimError;

pub use config::{default_data_dir, Precision, TrainConfig, MNIST_DIR_ENV, TEST_IMAGES, TEST_LABELS, TRAIN_IMAGES, TRAIN_LABELS};
pub use format::{fmt_g9, fmt_opt};
pub use learned::{first_learned_tracking, LearnedRule, LearnedTracker};
pub use presets::{noise_grid, winsor_grid, Preset, Scale, NOISE_LEVELS, WINSOR_LEVELS};
pub use run::{
    coherence_csv, overfit, run_experiment, run_with_data, ExperimentData, MetricsLog, MetricsRow, RunOutput, COHERENCE_HEADER, LEARNED_HEADER,
    METRICS_HEADER, NEVER_LEARNED,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Coherence(#[from] CoherenceError),
    #[error("non-finite training loss {loss} at step {step}")]
    NonFiniteLoss { step: usize, loss: f64 },
    #[error("non-finite {what} at step {step}")]
    NonFinite { step: usize, what: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
