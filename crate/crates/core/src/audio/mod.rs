//! Audio buffers, WAV files and the dual-window mel front end.

mod frontend;
mod mel;
mod wav;

pub use frontend::{
    dual_window_frame, frame_utterance, hann_window, DualWindowFrame, FrameSequence, FrontEnd,
    FrontEndConfig, FRAME_DIM, FRAME_HOP, FRAME_LEN, SUB_WINDOW_LEN, SUB_WINDOW_OFFSETS,
};
pub use mel::{build_mel_filterbank, hz_to_mel, mel_to_hz, MelFilterbank};
pub use wav::{load_wav, save_wav};

use thiserror::Error;

pub const SAMPLE_RATE_HZ: u32 = 16_000;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("unsupported WAV format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt WAV file: {0}")]
    CorruptFile(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("audio contains non-finite samples")]
    NonFinite,
    #[error("invalid filterbank range: {0}")]
    InvalidRange(String),
    #[error("frame at sample {start} needs {needed} samples, buffer has {len}")]
    OutOfBounds { start: usize, needed: usize, len: usize },
    #[error("audio too short: {len} samples, need at least {needed}")]
    TooShort { len: usize, needed: usize },
}

/// Mono 16 kHz waveform.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f32>,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>) -> Result<Self, AudioError> {
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(AudioError::NonFinite);
        }
        Ok(Self { samples })
    }

    pub fn silence(len: usize) -> Self {
        Self {
            samples: vec![0.0; len],
        }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        SAMPLE_RATE_HZ
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|&s| (s as f64) * (s as f64)).sum()
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.energy() / self.samples.len() as f64).sqrt()
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }

    pub fn slice(&self, start: usize, len: usize) -> Result<Self, AudioError> {
        let end = start.checked_add(len).filter(|&e| e <= self.samples.len()).ok_or(
            AudioError::OutOfBounds {
                start,
                needed: len,
                len: self.samples.len(),
            },
        )?;
        Ok(Self {
            samples: self.samples[start..end].to_vec(),
        })
    }
}
