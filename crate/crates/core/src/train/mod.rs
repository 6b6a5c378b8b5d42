//! Clone training: `Q` weight-shared encoder passes per item, the weighted
//! objective, and the optimization loop.

mod config;
mod log;
mod optim;
mod run;
mod step;

pub use config::{OptimizerKind, TrainConfig};
pub use log::{read_log_csv, write_log_csv, TrainLogRecord, LOG_HEADER};
pub use optim::{clip_global_norm, global_norm, Adam, Optimizer};
pub use run::{train, Incident, TrainOutcome};
pub use step::{clone_gradients, encode_clones, prepare_inputs, CloneForward, PreparedBatch, Trainer};

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::corpus::CorpusError;
use crate::losses::LossError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("training aborted after {attempts} consecutive non-finite steps at step {step}")]
    Aborted { step: usize, attempts: usize },
    #[error("batch does not match the configuration: {0}")]
    BatchMismatch(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
