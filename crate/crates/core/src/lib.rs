//! Noise-robust salient speech features.
//!
//! Clean utterances are mixed with several independent noise draws; a single
//! encoder evaluated on every noisy copy (the "clones") is trained so that all
//! copies map to the same low-dimensional feature track. A distribution-matching
//! term shapes the features toward an independent unit-variance Laplacian and a
//! mirrored decoder reconstructs the clean dual-window mel spectrum.
//!
//! Module map:
//! - [`audio`]: WAV I/O and the 240-bin dual-window mel front end
//! - [`corpus`]: SNR mixing, synthetic corpora, manifests, clone batches
//! - [`autodiff`]: tape-based reverse-mode differentiation
//! - [`model`]: LSTM encoder/decoder, parameters, checkpoints
//! - [`losses`]: equivalence, MMD and decoder losses
//! - [`train`]: clone training loop and optimizers
//! - [`inference`]: feature extraction, resynthesis, evaluation
//! - [`selfcheck`]: verification oracles runnable from the CLI

pub mod audio;
pub mod autodiff;
pub mod corpus;
pub mod exec;
pub mod inference;
pub mod losses;
pub mod model;
pub mod rng;
pub mod selfcheck;
pub mod train;

pub use exec::Exec;
