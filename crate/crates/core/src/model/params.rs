use std::collections::HashMap;

use rand::Rng;

use super::{EncoderConfig, ModelError};
use crate::autodiff::{Real, Tensor};
use crate::rng;

/// Smallest per-bin standard deviation used for normalization.
const MIN_STD: f32 = 1e-3;

/// Per-bin input normalization statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl NormStats {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Mean and population standard deviation over a set of frames.
    pub fn from_frames<'a>(frames: impl IntoIterator<Item = &'a [f32]>, dim: usize) -> Self {
        let mut sum = vec![0.0f64; dim];
        let mut sq = vec![0.0f64; dim];
        let mut n = 0usize;
        for f in frames {
            debug_assert_eq!(f.len(), dim);
            for (k, &v) in f.iter().enumerate() {
                sum[k] += v as f64;
                sq[k] += (v as f64) * (v as f64);
            }
            n += 1;
        }
        if n == 0 {
            return Self::identity(dim);
        }
        let n = n as f64;
        let mean: Vec<f32> = sum.iter().map(|s| (s / n) as f32).collect();
        let std = sum
            .iter()
            .zip(&sq)
            .map(|(s, q)| {
                let m = s / n;
                ((q / n - m * m).max(0.0).sqrt() as f32).max(MIN_STD)
            })
            .collect();
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, frame: &[f32]) -> Vec<f32> {
        frame
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn denormalize(&self, frame: &[f32]) -> Vec<f32> {
        frame
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }
}

/// Named parameter tensors for the encoder and decoder, in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
    pub norm: NormStats,
}

impl<T: Real> ModelParams<T> {
    pub fn from_named(entries: Vec<(String, Tensor<T>)>, norm: NormStats) -> Self {
        let mut names = Vec::with_capacity(entries.len());
        let mut tensors = Vec::with_capacity(entries.len());
        let mut index = HashMap::new();
        for (i, (name, t)) in entries.into_iter().enumerate() {
            index.insert(name.clone(), i);
            names.push(name);
            tensors.push(t);
        }
        Self {
            names,
            tensors,
            index,
            norm,
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.position(name).map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
            norm: self.norm.clone(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Checks that every tensor the configuration needs is present with the
    /// right shape.
    pub fn validate(&self, config: &EncoderConfig) -> Result<(), ModelError> {
        let expected = layout(config);
        if expected.len() != self.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "expected {} tensors, found {}",
                expected.len(),
                self.len()
            )));
        }
        for (name, shape) in expected {
            let t = self.get(&name).ok_or_else(|| ModelError::MissingParam(name.clone()))?;
            if t.shape() != shape.as_slice() {
                return Err(ModelError::ShapeMismatch(format!(
                    "{name}: expected {shape:?}, found {:?}",
                    t.shape()
                )));
            }
        }
        if self.norm.dim() != config.input_dim || self.norm.std.len() != config.input_dim {
            return Err(ModelError::ShapeMismatch(format!(
                "normalization stats have {} bins, model expects {}",
                self.norm.dim(),
                config.input_dim
            )));
        }
        Ok(())
    }
}

/// Names and shapes of every parameter, encoder first.
pub(crate) fn layout(config: &EncoderConfig) -> Vec<(String, Vec<usize>)> {
    let h = config.hidden;
    let mut out = Vec::new();
    let lstm = |out: &mut Vec<(String, Vec<usize>)>, prefix: String, input: usize| {
        out.push((format!("{prefix}.w_x"), vec![input, 4 * h]));
        out.push((format!("{prefix}.w_h"), vec![h, 4 * h]));
        out.push((format!("{prefix}.b"), vec![4 * h]));
    };
    let fc = |out: &mut Vec<(String, Vec<usize>)>, prefix: String, input: usize, output: usize| {
        out.push((format!("{prefix}.w"), vec![input, output]));
        out.push((format!("{prefix}.b"), vec![output]));
    };

    let mut width = config.input_dim;
    for k in 0..config.lstm_layers {
        lstm(&mut out, format!("enc.lstm{k}"), width);
        width = h;
    }
    for k in 0..config.fc_layers {
        fc(&mut out, format!("enc.fc{k}"), width, h);
    }
    fc(&mut out, "enc.head".into(), width, config.feature_dim);

    width = config.feature_dim;
    for k in 0..config.fc_layers {
        fc(&mut out, format!("dec.fc{k}"), width, h);
        width = h;
    }
    for k in 0..config.lstm_layers {
        lstm(&mut out, format!("dec.lstm{k}"), width);
        width = h;
    }
    fc(&mut out, "dec.head".into(), width, config.input_dim);
    out
}

/// Glorot-uniform weights, zero biases except a forget-gate bias of 1.
pub fn init_params(config: &EncoderConfig, seed: u64) -> Result<ModelParams<f32>, ModelError> {
    config.validate()?;
    let h = config.hidden;
    let entries = layout(config)
        .into_iter()
        .enumerate()
        .map(|(i, (name, shape))| {
            let t = if let [fan_in, fan_out] = shape[..] {
                let mut r = rng::stream(seed, "init", i as u64);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| r.gen_range(-limit..limit) as f32)
                    .collect();
                Tensor::matrix(fan_in, fan_out, data)
            } else if name.contains(".lstm") {
                let mut data = vec![0.0f32; 4 * h];
                data[h..2 * h].fill(1.0);
                Tensor::new(shape, data).expect("bias shape")
            } else {
                Tensor::zeros(&shape)
            };
            (name, t)
        })
        .collect();
    Ok(ModelParams::from_named(entries, NormStats::identity(config.input_dim)))
}
