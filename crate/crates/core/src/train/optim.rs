use super::{OptimizerKind, TrainConfig};
use crate::autodiff::{Real, Tensor};
use crate::model::ModelParams;

/// Adam with bias correction:
/// `m <- b1 m + (1 - b1) g`, `v <- b2 v + (1 - b2) g^2`,
/// `theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)`.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c = |v: f64| T::from_f64_lossy(v);
        let (b1, b2) = (c(self.beta1), c(self.beta2));
        let one = T::one();
        let bc1 = c(1.0 - self.beta1.powi(self.t as i32));
        let bc2 = c(1.0 - self.beta2.powi(self.t as i32));
        let (lr, eps) = (c(self.lr), c(self.eps));
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[derive(Clone, Debug)]
pub enum Optimizer<T> {
    Adam(Adam<T>),
    Sgd { lr: f64 },
}

impl<T: Real> Optimizer<T> {
    pub fn from_config(config: &TrainConfig) -> Self {
        match config.optimizer {
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(config.learning_rate, config.beta1, config.beta2, config.eps)),
            OptimizerKind::Sgd => Optimizer::Sgd { lr: config.learning_rate },
        }
    }

    /// Applies one update; `grads` is aligned with the parameter tensors.
    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &[Tensor<T>]) {
        match self {
            Optimizer::Adam(a) => a.step(params.tensors_mut(), grads),
            Optimizer::Sgd { lr } => {
                let lr = T::from_f64_lossy(*lr);
                for (p, g) in params.tensors_mut().iter_mut().zip(grads) {
                    for (p, &g) in p.data_mut().iter_mut().zip(g.data()) {
                        *p = *p - lr * g;
                    }
                }
            }
        }
    }
}

pub fn global_norm<T: Real>(grads: &[Tensor<T>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = T::from_f64_lossy(max_norm / norm);
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v = *v * s;
            }
        }
    }
    norm
}
