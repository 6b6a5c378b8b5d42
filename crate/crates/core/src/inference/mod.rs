//! Full-utterance feature extraction, decoder-based mel reconstruction,
//! Griffin-Lim resynthesis and proxy evaluation metrics.

mod eval;
mod extract;
mod features;
mod griffin_lim;
mod metrics;

pub use eval::{evaluate, AggregateReport, EvalReport, SnrSummary, UtteranceReport};
pub use extract::{extract_features, reconstruct_mel, Inference};
pub use features::{export_features, export_features_csv, import_features, FeatureTrack, FEATURE_MAGIC, FEATURE_VERSION};
pub use griffin_lim::{griffin_lim, mel_to_linear_magnitude, GriffinLimOutput, DEFAULT_GL_ITERATIONS};
pub use metrics::{excess_kurtosis_per_dim, mse, pearson, rmse, variance_per_dim};

use std::io;

use thiserror::Error;

use crate::audio::AudioError;
use crate::corpus::CorpusError;
use crate::model::{CheckpointError, ModelError};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("audio has {len} samples; need at least {needed}")]
    TooShort { len: usize, needed: usize },
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("iterations must be at least 1, got {0}")]
    InvalidIterations(usize),
    #[error("not a feature file (bad magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("feature file version {0} is not supported")]
    VersionMismatch(u32),
    #[error("feature file is truncated")]
    TruncatedFile,
    #[error("nothing to evaluate: {0}")]
    Empty(String),
    #[error(transparent)]
    Audio(AudioError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl From<AudioError> for InferenceError {
    fn from(e: AudioError) -> Self {
        match e {
            AudioError::TooShort { len, needed } => InferenceError::TooShort { len, needed },
            other => InferenceError::Audio(other),
        }
    }
}
