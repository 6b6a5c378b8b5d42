//! Binary checkpoint format.
//!
//! Layout, all integers little-endian `u32`:
//! `SLNT`, version, config length, `key=value` lines, tensor count, then per
//! tensor: name length, name, rank, dims, `f32` data. Normalization stats are
//! stored as the tensors `norm.mean` and `norm.std`.

use std::fs;
use std::io;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{EncoderConfig, ModelError, ModelParams, NormStats};
use crate::audio::FrontEndConfig;
use crate::autodiff::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SLNT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("checkpoint version {found} is not supported (expected {CHECKPOINT_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("checkpoint is truncated")]
    TruncatedFile,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// Everything needed to run a trained model.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub encoder: EncoderConfig,
    pub frontend: FrontEndConfig,
    pub params: ModelParams<f32>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        let config = config_block(&self.encoder, &self.frontend);
        put_u32(&mut out, config.len() as u32);
        out.extend_from_slice(config.as_bytes());

        let norm = &self.params.norm;
        let extras = [
            ("norm.mean", Tensor::matrix(1, norm.mean.len(), norm.mean.clone())),
            ("norm.std", Tensor::matrix(1, norm.std.len(), norm.std.clone())),
        ];
        put_u32(&mut out, (self.params.len() + extras.len()) as u32);
        let all = self.params.iter().chain(extras.iter().map(|(n, t)| (*n, t)));
        for (name, t) in all {
            put_u32(&mut out, name.len() as u32);
            out.extend_from_slice(name.as_bytes());
            let shape: &[usize] = if name.starts_with("norm.") { &t.shape()[1..] } else { t.shape() };
            put_u32(&mut out, shape.len() as u32);
            for &d in shape {
                put_u32(&mut out, d as u32);
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        if &magic != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::VersionMismatch { found: version });
        }
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?)
            .map_err(|_| CheckpointError::Malformed("config block is not UTF-8".into()))?;
        let (encoder, frontend) = parse_config(text)?;

        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count);
        let (mut mean, mut std) = (None, None);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or(CheckpointError::TruncatedFile)?)?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            match name.as_str() {
                "norm.mean" => mean = Some(data),
                "norm.std" => std = Some(data),
                _ => {
                    let t = Tensor::new(shape, data)
                        .map_err(|e| CheckpointError::Malformed(format!("tensor {name}: {e}")))?;
                    entries.push((name, t));
                }
            }
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Malformed(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        let (Some(mean), Some(std)) = (mean, std) else {
            return Err(CheckpointError::Malformed("missing normalization stats".into()));
        };
        let params = ModelParams::from_named(entries, NormStats { mean, std });
        params.validate(&encoder)?;
        Ok(Self {
            encoder,
            frontend,
            params,
        })
    }

    /// Short content hash used to tag derived artifacts.
    pub fn id(&self) -> String {
        let digest = Sha256::digest(self.to_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, checkpoint.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::TruncatedFile)?;
        let s = self.bytes.get(self.pos..end).ok_or(CheckpointError::TruncatedFile)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn config_block(e: &EncoderConfig, f: &FrontEndConfig) -> String {
    // `{:?}` on f64 prints the shortest string that parses back exactly.
    format!(
        "lstm_layers={}\nfc_layers={}\nhidden={}\nfeature_dim={}\ninput_dim={}\n\
         n_fft={}\nn_mels={}\nfmin_hz={:?}\nfmax_hz={:?}\nfloor={:?}\n",
        e.lstm_layers, e.fc_layers, e.hidden, e.feature_dim, e.input_dim, f.n_fft, f.n_mels, f.fmin_hz, f.fmax_hz, f.floor
    )
}

fn parse_config(text: &str) -> Result<(EncoderConfig, FrontEndConfig), CheckpointError> {
    let mut e = EncoderConfig::desk();
    let mut f = FrontEndConfig::default();
    let bad = |k: &str, v: &str| CheckpointError::Malformed(format!("bad value {v:?} for {k}"));
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CheckpointError::Malformed(format!("config line {line:?}")))?;
        let int = || v.parse::<usize>().map_err(|_| bad(k, v));
        let float = || v.parse::<f64>().map_err(|_| bad(k, v));
        match k {
            "lstm_layers" => e.lstm_layers = int()?,
            "fc_layers" => e.fc_layers = int()?,
            "hidden" => e.hidden = int()?,
            "feature_dim" => e.feature_dim = int()?,
            "input_dim" => e.input_dim = int()?,
            "n_fft" => f.n_fft = int()?,
            "n_mels" => f.n_mels = int()?,
            "fmin_hz" => f.fmin_hz = float()?,
            "fmax_hz" => f.fmax_hz = float()?,
            "floor" => f.floor = float()?,
            other => return Err(CheckpointError::Malformed(format!("unknown config key {other:?}"))),
        }
    }
    e.validate()?;
    Ok((e, f))
}
