//! Clone training data.
//!
//! A noisy mixture is `y = x + sum_j alpha_j * n_j`. Each training item
//! takes one clean segment and builds `Q` mixtures that differ only in their
//! noise draws; the clean frames of the same segment are the decoder target.

mod batch;
mod manifest;
mod mix;
mod synth;

pub use batch::{build_clone_batch, BatchItemMeta, BatchSpec, CloneBatch, LoadedCorpus, LoadedEntry, NoiseDraw, SEGMENT_FRAMES, SEGMENT_SAMPLES};
pub use manifest::{load_manifest, save_manifest, CloneSpec, Manifest};
pub use mix::{measured_snr_db, mix_at_snr, mix_sources, snr_gain, Mixture, MIN_NOISE_SAMPLES};
pub use synth::{synth_corpus, synth_corpus_with, NoiseKind, SynthConfig, DEFAULT_SNR_LIST};

use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::audio::AudioError;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{0} signal is silent")]
    SilentSignal(&'static str),
    #[error("noise has {len} samples; need at least {needed}")]
    NoiseTooShort { len: usize, needed: usize },
    #[error("manifest has no entries")]
    ManifestEmpty,
    #[error("utterance {id} has {len} samples; a training segment needs {needed}")]
    UtteranceTooShort { id: String, len: usize, needed: usize },
    #[error("manifest line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("referenced file {0} does not exist")]
    MissingFile(PathBuf),
    #[error("invalid entry: {0}")]
    InvalidSpec(String),
    #[error("{path}: {source}")]
    Audio { path: PathBuf, source: AudioError },
    #[error(transparent)]
    Frontend(#[from] AudioError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}
