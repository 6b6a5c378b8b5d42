//! Runtime verification oracles, shared by the `selfcheck` command and the
//! acceptance suite.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::audio::{AudioBuffer, FrontEndConfig};
use crate::autodiff::{relative_error, Tensor};
use crate::corpus::{measured_snr_db, mix_sources};
use crate::inference::excess_kurtosis_per_dim;
use crate::inference::variance_per_dim;
use crate::losses::{equivalence_loss, global_loss, laplace_prior_sample, mmd_sq, LossWeights};
use crate::model::{init_params, Checkpoint, EncoderConfig, ModelParams};
use crate::rng;
use crate::train::{clone_gradients, PreparedBatch, TrainError};
use crate::Exec;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }
}

#[derive(Clone, Debug)]
pub struct SelfCheckOptions {
    /// Kernel scale used by the MMD oracles. Anything other than 1.0
    /// corrupts the kernel constant and must make the oracle fail.
    pub kernel_scale: f64,
    pub grad_seeds: Vec<u64>,
    pub seed: u64,
}

impl Default for SelfCheckOptions {
    fn default() -> Self {
        Self {
            kernel_scale: 1.0,
            grad_seeds: vec![0],
            seed: 0,
        }
    }
}

/// Shape of the random problem a composite gradient check runs on.
#[derive(Clone, Debug)]
pub struct GradCheckSetup {
    pub model: EncoderConfig,
    pub m: usize,
    pub clones: usize,
    pub steps: usize,
    pub h: f64,
    /// Random unit directions checked via directional derivatives.
    pub directions: usize,
}

impl Default for GradCheckSetup {
    fn default() -> Self {
        Self {
            model: EncoderConfig::desk(),
            m: 2,
            clones: 3,
            steps: 3,
            h: 1e-5,
            directions: 8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub seed: u64,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Label of the worst comparison.
    pub worst: String,
}

/// Encoder -> losses -> decoder gradient against central differences in
/// 64-bit.
///
/// Every parameter tensor contributes its largest-gradient coordinate, and
/// `directions` random unit vectors over the whole parameter space are
/// compared through directional derivatives. Parameters start from the
/// seeded init with small random offsets so biases are not all zero.
pub fn composite_gradient_check(seed: u64, setup: &GradCheckSetup) -> Result<GradCheckReport, TrainError> {
    let model = setup.model;
    let mut r = rng::stream(seed, "gradcheck", 0);
    let mut params: ModelParams<f64> = init_params(&model, seed)?.cast();
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v += 0.05 * r.sample::<f64, _>(StandardNormal);
        }
    }
    let rows = setup.m * setup.steps;
    let mut gauss = |n: usize| -> Vec<f64> { (0..n).map(|_| r.sample(StandardNormal)).collect() };
    let base = gauss(rows * model.input_dim);
    let clones = (0..setup.clones)
        .map(|_| {
            let noise = gauss(rows * model.input_dim);
            Tensor::matrix(rows, model.input_dim, base.iter().zip(noise).map(|(b, n)| b + 0.3 * n).collect())
        })
        .collect();
    let batch = PreparedBatch {
        clones,
        target: Tensor::matrix(rows, model.input_dim, base),
        m: setup.m,
        steps: setup.steps,
    };
    let prior = laplace_prior_sample(rows, model.feature_dim, &mut rng::stream(seed, "gradcheck-prior", 0));
    let weights = LossWeights::default();

    let loss = |p: &ModelParams<f64>| -> Result<f64, TrainError> {
        Ok(clone_gradients(p, &model, &batch, &weights, &prior, Exec::Serial)?.0.d_global)
    };
    let (_, grads) = clone_gradients(&params, &model, &batch, &weights, &prior, Exec::Serial)?;
    let h = setup.h;

    let mut worst = (0.0f64, String::new());
    let mut checked = 0;
    let mut record = |err: f64, label: String| {
        checked += 1;
        if err > worst.0 || worst.1.is_empty() {
            worst = (err, label);
        }
    };

    for k in 0..params.len() {
        let g = grads[k].data();
        let Some((j, _)) = g.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())) else {
            continue;
        };
        let orig = params.tensors()[k].data()[j];
        params.tensors_mut()[k].data_mut()[j] = orig + h;
        let plus = loss(&params)?;
        params.tensors_mut()[k].data_mut()[j] = orig - h;
        let minus = loss(&params)?;
        params.tensors_mut()[k].data_mut()[j] = orig;
        let fd = (plus - minus) / (2.0 * h);
        record(relative_error(g[j], fd), format!("{}[{j}]: analytic {:e}, fd {fd:e}", params.names()[k], g[j]));
    }

    let mut dr = rng::stream(seed, "gradcheck-dir", 0);
    for d in 0..setup.directions {
        let dir: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .map(|t| (0..t.numel()).map(|_| dr.sample(StandardNormal)).collect())
            .collect();
        let norm = dir.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        let analytic: f64 = dir
            .iter()
            .zip(&grads)
            .map(|(d, g)| d.iter().zip(g.data()).map(|(a, b)| a * b).sum::<f64>())
            .sum::<f64>()
            / norm;
        let shifted = |sign: f64| {
            let mut p = params.clone();
            for (t, d) in p.tensors_mut().iter_mut().zip(&dir) {
                for (v, dv) in t.data_mut().iter_mut().zip(d) {
                    *v += sign * h * dv / norm;
                }
            }
            p
        };
        let fd = (loss(&shifted(1.0))? - loss(&shifted(-1.0))?) / (2.0 * h);
        record(relative_error(analytic, fd), format!("direction {d}: analytic {analytic:e}, fd {fd:e}"));
    }
    Ok(GradCheckReport {
        seed,
        max_rel_error: worst.0,
        checked,
        worst: worst.1,
    })
}

/// Absolute-tolerance comparison that reports both values.
fn oracle(name: &'static str, expected: f64, actual: f64, tol: f64) -> CheckResult {
    let passed = (expected - actual).abs() <= tol;
    CheckResult::new(name, passed, format!("expected {expected:?}, actual {actual:?}"))
}

/// The two one-dimensional MMD hand values, `C = 2 * 1 * scale^2`.
pub fn mmd_oracles(kernel_scale: f64) -> Vec<CheckResult> {
    let w = LossWeights {
        kernel_scale,
        ..LossWeights::default()
    };
    let y = Tensor::matrix(2, 1, vec![0.0, 0.0]);
    let value = |z: Vec<f64>| mmd_sq(&Tensor::matrix(2, 1, z), &y, &w).unwrap_or(f64::NAN);
    vec![
        oracle("mmd oracle z={0,0}", 0.0, value(vec![0.0, 0.0]), 1e-12),
        oracle("mmd oracle z={1,2}", 2.0 / 3.0, value(vec![1.0, 2.0]), 1e-12),
    ]
}

pub fn loss_oracles() -> Vec<CheckResult> {
    let f = Tensor::matrix(1, 6, vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
    let f = Tensor::new(vec![1, 3, 1, 2], f.into_data()).expect("shape matches");
    let eq = equivalence_loss(&f).unwrap_or(f64::NAN);
    let g = global_loss((2.0, 0.5, 1.0), &LossWeights::default()).d_global;
    vec![
        oracle("equivalence oracle", 2.0, eq, 1e-12),
        oracle("global loss oracle", 20.5, g, 1e-12),
    ]
}

/// Variance and excess kurtosis of 10^5 prior draws per component.
pub fn laplace_moments(seed: u64) -> CheckResult {
    let dim = 12;
    let s = laplace_prior_sample(100_000, dim, &mut rng::stream(seed, "selfcheck-laplace", 0)).cast::<f32>();
    let rows: Vec<&[f32]> = s.data().chunks_exact(dim).collect();
    let var = variance_per_dim(&rows, dim);
    let kurt = excess_kurtosis_per_dim(&rows, dim);
    let passed = var.iter().all(|v| (0.97..=1.03).contains(v)) && kurt.iter().all(|k| (2.7..=3.3).contains(k));
    let range = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        format!("[{lo:.4}, {hi:.4}]")
    };
    CheckResult::new(
        "laplace moments",
        passed,
        format!("variance {} (want [0.97, 1.03]), excess kurtosis {} (want [2.7, 3.3])", range(&var), range(&kurt)),
    )
}

/// Mixes a tone with noise at several SNRs and measures the result.
pub fn snr_mixer(seed: u64) -> CheckResult {
    let mut r = rng::stream(seed, "selfcheck-mix", 0);
    let clean = AudioBuffer::new((0..16000).map(|n| (n as f32 * 0.07).sin() * 0.4).collect()).expect("finite");
    let noise = AudioBuffer::new((0..12000).map(|_| r.gen_range(-0.2f32..0.2)).collect()).expect("finite");
    let mut worst = 0.0f64;
    for snr in [-5.0, 0.0, 5.0, 10.0, 15.0, 30.0] {
        match mix_sources(&clean, &[&noise], snr, &mut r) {
            Ok(mix) => worst = worst.max((measured_snr_db(clean.samples(), &mix.noise) - snr).abs()),
            Err(e) => return CheckResult::new("snr mixer", false, e.to_string()),
        }
    }
    CheckResult::new("snr mixer", worst <= 1e-6, format!("max |measured - target| = {worst:e} dB"))
}

pub fn checkpoint_roundtrip(seed: u64) -> CheckResult {
    let encoder = EncoderConfig::desk();
    let ck = match init_params(&encoder, seed) {
        Ok(params) => Checkpoint {
            encoder,
            frontend: FrontEndConfig::default(),
            params,
        },
        Err(e) => return CheckResult::new("checkpoint round trip", false, e.to_string()),
    };
    let bytes = ck.to_bytes();
    match Checkpoint::from_bytes(&bytes) {
        Ok(back) => {
            let same = back.to_bytes() == bytes
                && back.params.tensors().iter().zip(ck.params.tensors()).all(|(a, b)| {
                    a.data().iter().map(|v| v.to_bits()).eq(b.data().iter().map(|v| v.to_bits()))
                });
            CheckResult::new("checkpoint round trip", same, format!("{} bytes, id {}", bytes.len(), ck.id()))
        }
        Err(e) => CheckResult::new("checkpoint round trip", false, e.to_string()),
    }
}

pub fn gradient_checks(seeds: &[u64]) -> Vec<CheckResult> {
    let setup = GradCheckSetup::default();
    seeds
        .iter()
        .map(|&s| match composite_gradient_check(s, &setup) {
            Ok(rep) => CheckResult::new(
                "desk gradient check",
                rep.max_rel_error <= 1e-5,
                format!(
                    "seed {s}: max relative error {:e} over {} comparisons (worst {})",
                    rep.max_rel_error, rep.checked, rep.worst
                ),
            ),
            Err(e) => CheckResult::new("desk gradient check", false, format!("seed {s}: {e}")),
        })
        .collect()
}

/// Every oracle, in a fixed order.
pub fn run_selfcheck(opts: &SelfCheckOptions) -> Vec<CheckResult> {
    let mut out = mmd_oracles(opts.kernel_scale);
    out.extend(loss_oracles());
    out.push(laplace_moments(opts.seed));
    out.push(snr_mixer(opts.seed));
    out.push(checkpoint_roundtrip(opts.seed));
    out.extend(gradient_checks(&opts.grad_seeds));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_build_passes_cheap_checks() {
        for c in mmd_oracles(1.0).into_iter().chain(loss_oracles()) {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
        for c in [laplace_moments(0), snr_mixer(0), checkpoint_roundtrip(0)] {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn corrupted_kernel_fails_with_values() {
        let r = mmd_oracles(1.5);
        assert!(r[0].passed, "all-zero samples are kernel independent");
        assert!(!r[1].passed);
        assert!(r[1].detail.contains("expected 0.6666666666666666"), "{}", r[1].detail);
    }

    #[test]
    fn small_composite_gradient_check() {
        let setup = GradCheckSetup {
            model: EncoderConfig {
                hidden: 6,
                feature_dim: 3,
                input_dim: 5,
                ..EncoderConfig::desk()
            },
            directions: 4,
            ..GradCheckSetup::default()
        };
        let rep = composite_gradient_check(3, &setup).unwrap();
        assert!(rep.max_rel_error < 1e-6, "{rep:?}");
        assert_eq!(rep.checked, init_params(&setup.model, 0).unwrap().len() + 4);
    }
}
