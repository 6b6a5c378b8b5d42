//! One training step.
//!
//! 1. Every clone runs the encoder on its own tape; parameters enter each
//!    tape as borrowed leaves, so all clones share one parameter set.
//! 2. A small loss tape takes the clone features as leaves and evaluates
//!    `D_E + lambda_mmd * D_MMD` (clone 0 is the reference and the only clone
//!    seen by the MMD term), yielding the gradient with respect to each
//!    clone's features.
//! 3. Every clone tape decodes its features and back-propagates
//!    `lambda_d * D_D^q + <z_q, dL/dz_q>`, which gives that clone's exact
//!    contribution to the parameter gradient.
//!
//! Clone gradients are summed in clone order, so the result does not depend
//! on how phases 1 and 3 are scheduled.

use super::{clip_global_norm, Optimizer, TrainConfig, TrainError};
use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::corpus::CloneBatch;
use crate::exec::Exec;
use crate::losses::{decoder_loss_on, equivalence_loss_on, global_loss, mmd_sq_on, LossBreakdown, LossWeights};
use crate::model::{decode_on, encode_on, EncoderConfig, ModelParams, NormStats, ParamVars};

/// Normalized network inputs, each `T * m x N` in time-major row order.
#[derive(Clone, Debug)]
pub struct PreparedBatch<T> {
    pub clones: Vec<Tensor<T>>,
    pub target: Tensor<T>,
    pub m: usize,
    pub steps: usize,
}

pub fn prepare_inputs<T: Real>(batch: &CloneBatch, norm: &NormStats) -> Result<PreparedBatch<T>, TrainError> {
    let (m, q, steps, dim) = (batch.m, batch.q, batch.steps, batch.dim);
    if norm.dim() != dim {
        return Err(TrainError::BatchMismatch(format!(
            "frames have {dim} bins, normalization has {}",
            norm.dim()
        )));
    }
    Ok(PreparedBatch {
        clones: (0..q)
            .map(|c| arrange(steps, m, dim, norm, |i| batch.clone_sequence(i, c)))
            .collect(),
        target: arrange(steps, m, dim, norm, |i| batch.target(i)),
        m,
        steps,
    })
}

fn arrange<'b, T: Real>(
    steps: usize,
    m: usize,
    dim: usize,
    norm: &NormStats,
    seq: impl Fn(usize) -> &'b [f32],
) -> Tensor<T> {
    let mut out = Vec::with_capacity(steps * m * dim);
    for t in 0..steps {
        for i in 0..m {
            let frame = &seq(i)[t * dim..(t + 1) * dim];
            out.extend(
                frame
                    .iter()
                    .zip(norm.mean.iter().zip(&norm.std))
                    .map(|(v, (mu, sd))| T::from_f64_lossy(((v - mu) / sd) as f64)),
            );
        }
    }
    Tensor::matrix(steps * m, dim, out)
}

/// Encoder pass of one clone, kept alive for the decoder phase.
pub struct CloneForward<'p, T: Real> {
    pub tape: Tape<'p, T>,
    pub vars: ParamVars,
    pub z: Var,
}

/// Phase 1: runs the shared encoder on every clone.
pub fn encode_clones<'p, T: Real>(
    params: &'p ModelParams<T>,
    model: &EncoderConfig,
    batch: &'p PreparedBatch<T>,
    exec: Exec,
) -> Result<Vec<CloneForward<'p, T>>, TrainError> {
    exec.map_range(batch.clones.len(), |q| {
        let mut tape = Tape::with_finite_checks(false);
        let vars = ParamVars::register(&mut tape, params);
        let x = tape.constant_ref(&batch.clones[q]);
        let z = encode_on(&mut tape, params, &vars, model, x, batch.steps)?;
        Ok(CloneForward { tape, vars, z })
    })
    .into_iter()
    .collect()
}

/// Loss breakdown and parameter gradients (aligned with
/// [`ModelParams::tensors`]) for one batch and one set of prior samples.
pub fn clone_gradients<T: Real>(
    params: &ModelParams<T>,
    model: &EncoderConfig,
    batch: &PreparedBatch<T>,
    weights: &LossWeights,
    prior: &Tensor<T>,
    exec: Exec,
) -> Result<(LossBreakdown, Vec<Tensor<T>>), TrainError> {
    if batch.clones.len() < 2 {
        return Err(TrainError::BatchMismatch(format!("need at least 2 clones, got {}", batch.clones.len())));
    }
    let forwards = encode_clones(params, model, batch, exec)?;

    // Phase 2: feature-space losses on a separate tape.
    let mut loss_tape = Tape::with_finite_checks(false);
    let zs: Vec<Var> = forwards
        .iter()
        .map(|f| loss_tape.leaf(f.tape.value(f.z).clone()))
        .collect();
    let d_e = equivalence_loss_on(&mut loss_tape, &zs)?;
    let d_mmd = mmd_sq_on(&mut loss_tape, zs[0], prior, weights)?;
    let weighted = loss_tape.scale(d_mmd, T::from_f64_lossy(weights.lambda_mmd))?;
    let partial = loss_tape.add(d_e, weighted)?;
    let mut g = loss_tape.backward(partial)?;
    let z_shape = loss_tape.value(zs[0]).shape().to_vec();
    let z_grads: Vec<Tensor<T>> = zs.iter().map(|&z| g.take_or_zeros(z, &z_shape)).collect();
    let d_e = loss_tape.value(d_e).item().as_f64();
    let d_mmd = loss_tape.value(d_mmd).item().as_f64();

    // Phase 3: decoder and backward pass per clone.
    let lambda_d = T::from_f64_lossy(weights.lambda_d);
    let per_clone = exec
        .map_vec(forwards.into_iter().zip(z_grads).collect(), |(f, gz)| {
            let CloneForward { mut tape, vars, z } = f;
            let decoded = decode_on(&mut tape, params, &vars, model, z, batch.steps)?;
            let target = tape.constant_ref(&batch.target);
            let dd = decoder_loss_on(&mut tape, decoded, target)?;
            let scaled = tape.scale(dd, lambda_d)?;
            let through_z = tape.weighted_sum(z, gz)?;
            let total = tape.add(scaled, through_z)?;
            let mut grads = tape.backward(total)?;
            let param_grads: Vec<Tensor<T>> = vars
                .vars()
                .iter()
                .zip(params.tensors())
                .map(|(&v, p)| grads.take_or_zeros(v, p.shape()))
                .collect();
            Ok::<_, TrainError>((tape.value(dd).item().as_f64(), param_grads))
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;

    let mut d_d = 0.0;
    let mut merged: Option<Vec<Tensor<T>>> = None;
    for (dd, grads) in per_clone {
        d_d += dd;
        match merged.as_mut() {
            None => merged = Some(grads),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&grads) {
                    a.add_assign(g);
                }
            }
        }
    }
    Ok((global_loss((d_e, d_mmd, d_d), weights), merged.expect("at least two clones")))
}

/// Parameters plus optimizer state.
#[derive(Clone, Debug)]
pub struct Trainer<T: Real> {
    pub params: ModelParams<T>,
    pub optimizer: Optimizer<T>,
    pub model: EncoderConfig,
    pub weights: LossWeights,
    pub grad_clip: Option<f64>,
    pub exec: Exec,
}

impl<T: Real> Trainer<T> {
    pub fn new(params: ModelParams<T>, model: EncoderConfig, config: &TrainConfig, exec: Exec) -> Self {
        Self {
            params,
            optimizer: Optimizer::from_config(config),
            model,
            weights: config.weights,
            grad_clip: config.grad_clip,
            exec,
        }
    }

    /// One update. On a non-finite loss or gradient the parameters and
    /// optimizer state are left untouched.
    pub fn step(&mut self, batch: &CloneBatch, prior: &Tensor<T>, step: usize) -> Result<LossBreakdown, TrainError> {
        let prepared = prepare_inputs(batch, &self.params.norm)?;
        let (loss, mut grads) = clone_gradients(&self.params, &self.model, &prepared, &self.weights, prior, self.exec)?;
        if !loss.is_finite() || !grads.iter().all(Tensor::is_finite) {
            return Err(TrainError::NonFiniteLoss { step });
        }
        if let Some(max) = self.grad_clip {
            clip_global_norm(&mut grads, max);
        }
        self.optimizer.step(&mut self.params, &grads);
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::autodiff::relative_error;
    use crate::losses::laplace_prior_sample;
    use crate::model::init_params;
    use crate::rng;

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            lstm_layers: 2,
            fc_layers: 1,
            hidden: 6,
            feature_dim: 3,
            input_dim: 5,
        }
    }

    fn random_batch(m: usize, q: usize, steps: usize, dim: usize, seed: u64, identical: bool) -> CloneBatch {
        let mut r = rng::stream(seed, "batch", 0);
        let mut gen = |n: usize| (0..n).map(|_| r.gen_range(-2.0f32..2.0)).collect::<Vec<_>>();
        let block = steps * dim;
        let clones = if identical {
            let one: Vec<Vec<f32>> = (0..m).map(|_| gen(block)).collect();
            (0..m).flat_map(|i| (0..q).flat_map(|_| one[i].clone()).collect::<Vec<_>>()).collect()
        } else {
            gen(m * q * block)
        };
        let targets = gen(m * block);
        CloneBatch::new(m, q, steps, dim, clones, targets).unwrap()
    }

    /// Everything on one tape, the straightforward way.
    fn single_tape_loss(
        params: &ModelParams<f64>,
        model: &EncoderConfig,
        batch: &PreparedBatch<f64>,
        weights: &LossWeights,
        prior: &Tensor<f64>,
    ) -> (f64, Vec<Tensor<f64>>) {
        let mut tape = Tape::new();
        let vars = ParamVars::register(&mut tape, params);
        let mut zs = Vec::new();
        let target = tape.constant_ref(&batch.target);
        let mut dd_total = None;
        for x in &batch.clones {
            let x = tape.constant_ref(x);
            let z = encode_on(&mut tape, params, &vars, model, x, batch.steps).unwrap();
            let y = decode_on(&mut tape, params, &vars, model, z, batch.steps).unwrap();
            let dd = decoder_loss_on(&mut tape, y, target).unwrap();
            dd_total = Some(match dd_total {
                None => dd,
                Some(acc) => tape.add(acc, dd).unwrap(),
            });
            zs.push(z);
        }
        let de = equivalence_loss_on(&mut tape, &zs).unwrap();
        let mmd = mmd_sq_on(&mut tape, zs[0], prior, weights).unwrap();
        let a = tape.scale(mmd, weights.lambda_mmd).unwrap();
        let b = tape.scale(dd_total.unwrap(), weights.lambda_d).unwrap();
        let s = tape.add(de, a).unwrap();
        let total = tape.add(s, b).unwrap();
        let value = tape.value(total).item();
        let mut g = tape.backward(total).unwrap();
        let grads = vars
            .vars()
            .iter()
            .zip(params.tensors())
            .map(|(&v, p)| g.take_or_zeros(v, p.shape()))
            .collect();
        (value, grads)
    }

    #[test]
    fn phased_gradients_equal_single_tape_gradients() {
        let model = tiny();
        let params = init_params(&model, 3).unwrap().cast::<f64>();
        let batch = prepare_inputs::<f64>(&random_batch(3, 3, 4, 5, 1, false), &NormStats::identity(5)).unwrap();
        let prior = laplace_prior_sample(12, 3, &mut rng::stream(0, "prior", 0));
        let weights = LossWeights::default();
        let (loss, grads) = clone_gradients(&params, &model, &batch, &weights, &prior, Exec::Serial).unwrap();
        let (value, reference) = single_tape_loss(&params, &model, &batch, &weights, &prior);
        assert!(relative_error(loss.d_global, value) < 1e-12);
        for (a, b) in grads.iter().zip(&reference) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!(relative_error(*x, *y) < 1e-9 || (x - y).abs() < 1e-12, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn serial_and_parallel_are_bit_identical() {
        let model = tiny();
        let params = init_params(&model, 4).unwrap();
        let batch = prepare_inputs::<f32>(&random_batch(4, 5, 3, 5, 2, false), &NormStats::identity(5)).unwrap();
        let prior = laplace_prior_sample(12, 3, &mut rng::stream(0, "prior", 0)).cast::<f32>();
        let w = LossWeights::default();
        let a = clone_gradients(&params, &model, &batch, &w, &prior, Exec::Serial).unwrap();
        let b = clone_gradients(&params, &model, &batch, &w, &prior, Exec::Parallel).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn clones_borrow_the_shared_parameters() {
        let model = tiny();
        let params = init_params(&model, 5).unwrap();
        let batch = prepare_inputs::<f32>(&random_batch(2, 4, 3, 5, 3, false), &NormStats::identity(5)).unwrap();
        let forwards = encode_clones(&params, &model, &batch, Exec::Parallel).unwrap();
        assert_eq!(forwards.len(), 4);
        for f in &forwards {
            for (&v, p) in f.vars.vars().iter().zip(params.tensors()) {
                assert!(std::ptr::eq(f.tape.value(v), p));
            }
        }
    }

    #[test]
    fn identical_clones_have_zero_equivalence_loss() {
        let model = tiny();
        let params = init_params(&model, 6).unwrap();
        let batch = prepare_inputs::<f32>(&random_batch(3, 4, 3, 5, 4, true), &NormStats::identity(5)).unwrap();
        let prior = laplace_prior_sample(9, 3, &mut rng::stream(0, "prior", 0)).cast::<f32>();
        let (loss, _) = clone_gradients(&params, &model, &batch, &LossWeights::default(), &prior, Exec::Parallel).unwrap();
        assert!(loss.d_e < 1e-10);
    }

    #[test]
    fn pure_equivalence_on_identical_clones_leaves_sgd_params_unchanged() {
        let model = tiny();
        let params = init_params(&model, 7).unwrap();
        let cfg = TrainConfig {
            optimizer: super::super::OptimizerKind::Sgd,
            learning_rate: 0.1,
            weights: LossWeights {
                lambda_mmd: 0.0,
                lambda_d: 0.0,
                kernel_scale: 1.0,
            },
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(params.clone(), model, &cfg, Exec::Serial);
        let batch = random_batch(3, 4, 3, 5, 5, true);
        let prepared = prepare_inputs::<f32>(&batch, &trainer.params.norm).unwrap();
        let prior = laplace_prior_sample(9, 3, &mut rng::stream(0, "prior", 0)).cast::<f32>();
        let (_, grads) = clone_gradients(&params, &model, &prepared, &cfg.weights, &prior, Exec::Serial).unwrap();
        assert!(grads.iter().all(|g| g.data().iter().all(|&v| v == 0.0)));
        trainer.step(&batch, &prior, 1).unwrap();
        assert_eq!(trainer.params, params);
    }

    #[test]
    fn accounting_identity() {
        let model = tiny();
        let params = init_params(&model, 8).unwrap();
        let batch = prepare_inputs::<f32>(&random_batch(3, 3, 3, 5, 6, false), &NormStats::identity(5)).unwrap();
        let prior = laplace_prior_sample(9, 3, &mut rng::stream(0, "prior", 0)).cast::<f32>();
        let w = LossWeights::default();
        let (l, _) = clone_gradients(&params, &model, &batch, &w, &prior, Exec::Serial).unwrap();
        assert_eq!(l.d_global, l.d_e + w.lambda_mmd * l.d_mmd + w.lambda_d * l.d_d);
    }

    #[test]
    fn non_finite_step_leaves_params_untouched() {
        let model = tiny();
        let mut params = init_params(&model, 9).unwrap();
        params.tensors_mut()[0].data_mut()[0] = f32::NAN;
        let mut trainer = Trainer::new(params, model, &TrainConfig::default(), Exec::Serial);
        let before = trainer.params.tensors()[1].clone();
        let batch = random_batch(3, 2, 3, 5, 7, false);
        let prior = laplace_prior_sample(9, 3, &mut rng::stream(0, "prior", 0)).cast::<f32>();
        assert!(matches!(trainer.step(&batch, &prior, 4), Err(TrainError::NonFiniteLoss { step: 4 })));
        assert_eq!(trainer.params.tensors()[1], before);
    }

    #[test]
    fn prepared_layout_is_time_major_and_normalized() {
        let batch = random_batch(2, 2, 3, 5, 8, false);
        let norm = NormStats {
            mean: vec![1.0; 5],
            std: vec![2.0; 5],
        };
        let p = prepare_inputs::<f64>(&batch, &norm).unwrap();
        // Row t*m + i holds frame t of item i.
        let raw = batch.clone_sequence(1, 1)[2 * 5 + 3];
        assert_eq!(p.clones[1].data()[(2 * 2 + 1) * 5 + 3], ((raw - 1.0) / 2.0) as f64);
        let raw_t = batch.target(0)[5];
        assert_eq!(p.target.data()[2 * 5], ((raw_t - 1.0) / 2.0) as f64);
    }
}
