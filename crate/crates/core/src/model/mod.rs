//! Encoder and mirrored decoder networks.
//!
//! The encoder maps normalized dual-window frames through an LSTM stack, a
//! tanh fully connected stack and a final linear head to `feature_dim`
//! salient features per frame. The decoder mirrors it: FC stack, LSTM stack,
//! linear head back to the frame dimension. All clones of the encoder share a
//! single [`ModelParams`].

mod checkpoint;
mod config;
mod network;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{EncoderConfig, Preset};
pub use network::{decode_on, decode_sequence, encode_on, encode_sequence, ParamVars};
pub use params::{init_params, ModelParams, NormStats};

use thiserror::Error;

use crate::autodiff::AutodiffError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}
