//! The three training losses and their weighted combination.
//!
//! `D_global = D_E + lambda_mmd * D_MMD + lambda_d * D_D` where
//! - `D_E` sums squared feature distances between the reference clone (index
//!   0) and every other clone,
//! - `D_MMD` is the squared maximum mean discrepancy between reference-clone
//!   features and samples from an independent unit-variance Laplacian, using
//!   an inverse multiquadratic kernel `C / (C + |a - b|^2)` with
//!   `C = 2 * L * scale^2`,
//! - `D_D` sums squared errors between decoded frames of every clone and the
//!   clean target frames.
//!
//! The MMD estimator averages the within-sample kernels over `i != j`
//! (`1 / (m (m - 1))`) but the cross term over all pairs (`2 / m^2`), so it
//! can dip slightly below zero.
//!
//! Every loss exists twice: as a plain function of values (used by oracles and
//! evaluation) and as a graph on an autodiff [`Tape`] (used by training).

use rand::Rng;
use thiserror::Error;

use crate::autodiff::{imq_gram_values, AutodiffError, Real, Tape, Tensor, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("equivalence loss needs at least 2 clones, got {0}")]
    QTooSmall(usize),
    #[error("kernel arguments have dimensions {0} and {1}")]
    DimMismatch(usize, usize),
    #[error("MMD needs at least 2 samples per side, got {0}")]
    TooFewSamples(usize),
    #[error("invalid loss weights: {0}")]
    InvalidWeights(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Defaults: `lambda_mmd = 1.0`, `lambda_d = 18.0`, kernel scale 1.0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_mmd: f64,
    pub lambda_d: f64,
    pub kernel_scale: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_mmd: 1.0,
            lambda_d: 18.0,
            kernel_scale: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(self.lambda_mmd) && ok(self.lambda_d) && ok(self.kernel_scale)) || self.kernel_scale == 0.0 {
            return Err(LossError::InvalidWeights(format!("{self:?}")));
        }
        Ok(())
    }

    /// `C = 2 * dim * scale^2`.
    pub fn kernel_constant(&self, dim: usize) -> f64 {
        2.0 * dim as f64 * self.kernel_scale * self.kernel_scale
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub d_e: f64,
    pub d_mmd: f64,
    pub d_d: f64,
    pub d_global: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.d_e, self.d_mmd, self.d_d, self.d_global].iter().all(|v| v.is_finite())
    }
}

pub fn global_loss(parts: (f64, f64, f64), weights: &LossWeights) -> LossBreakdown {
    let (d_e, d_mmd, d_d) = parts;
    LossBreakdown {
        d_e,
        d_mmd,
        d_d,
        d_global: d_e + weights.lambda_mmd * d_mmd + weights.lambda_d * d_d,
    }
}

fn dims4<T: Real>(t: &Tensor<T>, what: &str) -> Result<[usize; 4], LossError> {
    match *t.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(LossError::ShapeMismatch(format!("{what} must be rank 4, got {:?}", t.shape()))),
    }
}

/// `features` is `m x Q x T x L`; clone 0 is the reference.
pub fn equivalence_loss<T: Real>(features: &Tensor<T>) -> Result<T, LossError> {
    let [m, q, t, l] = dims4(features, "features")?;
    if q < 2 {
        return Err(LossError::QTooSmall(q));
    }
    let data = features.data();
    let block = t * l;
    let mut total = T::zero();
    for i in 0..m {
        let item = &data[i * q * block..(i + 1) * q * block];
        let reference = &item[..block];
        for clone in item.chunks_exact(block).skip(1) {
            total = total
                + reference
                    .iter()
                    .zip(clone)
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum::<T>();
        }
    }
    Ok(total)
}

/// `C / (C + |a - b|^2)` with `C = 2 * a.len() * scale^2`.
pub fn imq_kernel(a: &[f64], b: &[f64], scale: f64) -> Result<f64, LossError> {
    if a.len() != b.len() {
        return Err(LossError::DimMismatch(a.len(), b.len()));
    }
    let c = 2.0 * a.len() as f64 * scale * scale;
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(c / (c + d))
}

/// Scale of the unit-variance Laplace distribution (`2 b^2 = 1`).
pub const LAPLACE_SCALE: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// `count x dim` i.i.d. Laplace(0, 1/sqrt(2)) samples by inverse CDF.
pub fn laplace_prior_sample<R: Rng + ?Sized>(count: usize, dim: usize, rng: &mut R) -> Tensor<f64> {
    let data = (0..count * dim)
        .map(|_| {
            let u = loop {
                let u = rng.gen::<f64>() - 0.5;
                if u > -0.5 {
                    break u;
                }
            };
            -LAPLACE_SCALE * u.signum() * (1.0 - 2.0 * u.abs()).ln()
        })
        .collect();
    Tensor::matrix(count, dim, data)
}

fn mmd_dims<T: Real>(z: &Tensor<T>, y: &Tensor<T>) -> Result<(usize, usize), LossError> {
    let (Some((m, l)), Some((m2, l2))) = (z.dims2(), y.dims2()) else {
        return Err(LossError::ShapeMismatch("MMD inputs must be matrices".into()));
    };
    if l != l2 {
        return Err(LossError::DimMismatch(l, l2));
    }
    if m != m2 {
        return Err(LossError::ShapeMismatch(format!("sample counts differ: {m} vs {m2}")));
    }
    if m < 2 {
        return Err(LossError::TooFewSamples(m));
    }
    Ok((m, l))
}

/// Squared MMD between the rows of `z` and `y` (both `m x L`).
pub fn mmd_sq<T: Real>(z: &Tensor<T>, y: &Tensor<T>, weights: &LossWeights) -> Result<T, LossError> {
    let (m, l) = mmd_dims(z, y)?;
    let c = T::from_f64_lossy(weights.kernel_constant(l));
    let sum = |a: &Tensor<T>, b: &Tensor<T>, zero_diag| -> T {
        imq_gram_values(a.data(), b.data(), m, m, l, c, zero_diag).into_iter().sum()
    };
    let mf = T::from_usize(m).unwrap();
    let within = (sum(z, z, true) + sum(y, y, true)) / (mf * (mf - T::one()));
    let cross = (T::one() + T::one()) * sum(z, y, false) / (mf * mf);
    Ok(within - cross)
}

/// `decoded` is `m x Q x T x N`, `targets` is `m x T x N`.
pub fn decoder_loss<T: Real>(decoded: &Tensor<T>, targets: &Tensor<T>) -> Result<T, LossError> {
    let [m, q, t, n] = dims4(decoded, "decoded")?;
    if targets.shape() != [m, t, n] {
        return Err(LossError::ShapeMismatch(format!(
            "targets {:?} do not match decoded {:?}",
            targets.shape(),
            decoded.shape()
        )));
    }
    let block = t * n;
    let mut total = T::zero();
    for i in 0..m {
        let target = &targets.data()[i * block..(i + 1) * block];
        for clone in 0..q {
            let start = (i * q + clone) * block;
            total = total
                + decoded.data()[start..start + block]
                    .iter()
                    .zip(target)
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum::<T>();
        }
    }
    Ok(total)
}

/// Equivalence loss on a tape. Each entry of `clones` holds the stacked
/// per-frame features of one clone (identical shapes); entry 0 is the
/// reference.
pub fn equivalence_loss_on<T: Real>(tape: &mut Tape<'_, T>, clones: &[Var]) -> Result<Var, LossError> {
    if clones.len() < 2 {
        return Err(LossError::QTooSmall(clones.len()));
    }
    let mut terms = Vec::with_capacity(clones.len() - 1);
    for &c in &clones[1..] {
        let diff = tape.sub(clones[0], c)?;
        terms.push(tape.sqnorm(diff)?);
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t)?;
    }
    Ok(total)
}

/// Squared MMD on a tape between the rows of `z` and fixed prior samples `y`.
pub fn mmd_sq_on<T: Real>(
    tape: &mut Tape<'_, T>,
    z: Var,
    y: &Tensor<T>,
    weights: &LossWeights,
) -> Result<Var, LossError> {
    let (m, l) = mmd_dims(tape.value(z), y)?;
    let c = T::from_f64_lossy(weights.kernel_constant(l));
    let syy: T = imq_gram_values(y.data(), y.data(), m, m, l, c, true).into_iter().sum();
    let mf = T::from_usize(m).unwrap();

    let kzz = tape.imq_gram(z, z, c, true)?;
    let szz = tape.sum(kzz)?;
    let syy = tape.constant(Tensor::scalar(syy));
    let within = tape.add(szz, syy)?;
    let within = tape.scale(within, T::one() / (mf * (mf - T::one())))?;

    let yv = tape.constant(y.clone());
    let kzy = tape.imq_gram(z, yv, c, false)?;
    let szy = tape.sum(kzy)?;
    let cross = tape.scale(szy, (T::one() + T::one()) / (mf * mf))?;
    Ok(tape.sub(within, cross)?)
}

/// Sum of squared differences between decoded and target frames.
pub fn decoder_loss_on<T: Real>(tape: &mut Tape<'_, T>, decoded: Var, target: Var) -> Result<Var, LossError> {
    let diff = tape.sub(decoded, target)?;
    Ok(tape.sqnorm(diff)?)
}

/// Outcome of a two-sample permutation test on the MMD statistic.
#[derive(Clone, Debug)]
pub struct PermutationOutcome {
    pub statistic: f64,
    pub null: Vec<f64>,
}

impl PermutationOutcome {
    /// Nearest-rank quantile of the null distribution.
    pub fn null_quantile(&self, q: f64) -> f64 {
        let mut sorted = self.null.clone();
        sorted.sort_by(f64::total_cmp);
        let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
        sorted[rank - 1]
    }
}

/// Permutation null for [`mmd_sq`]: the pooled samples are randomly relabelled
/// `permutations` times and the statistic recomputed from one pooled Gram
/// matrix.
pub fn mmd_permutation_test<R: Rng + ?Sized>(
    z: &Tensor<f64>,
    y: &Tensor<f64>,
    weights: &LossWeights,
    permutations: usize,
    rng: &mut R,
) -> Result<PermutationOutcome, LossError> {
    use rand::seq::SliceRandom;

    let statistic = mmd_sq(z, y, weights)?;
    let (m, l) = mmd_dims(z, y)?;
    let n = 2 * m;
    let mut pooled = z.data().to_vec();
    pooled.extend_from_slice(y.data());
    let gram = imq_gram_values(&pooled, &pooled, n, n, l, weights.kernel_constant(l), true);
    let off_diag_total: f64 = gram.iter().sum();

    let mut labels: Vec<usize> = (0..n).collect();
    let null = (0..permutations)
        .map(|_| {
            labels.shuffle(rng);
            pooled_statistic(&gram, n, off_diag_total, &labels)
        })
        .collect();
    Ok(PermutationOutcome { statistic, null })
}

/// MMD statistic for a labelling of pooled samples: the first half of
/// `labels` forms one sample, the rest the other.
fn pooled_statistic(gram: &[f64], n: usize, off_diag_total: f64, labels: &[usize]) -> f64 {
    let (first, second) = labels.split_at(n / 2);
    let m = first.len() as f64;
    let cross: f64 = first
        .iter()
        .map(|&i| second.iter().map(|&j| gram[i * n + j]).sum::<f64>())
        .sum();
    let within = off_diag_total - 2.0 * cross;
    within / (m * (m - 1.0)) - 2.0 * cross / (m * m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t1(values: &[f64]) -> Tensor<f64> {
        Tensor::matrix(values.len(), 1, values.to_vec())
    }

    #[test]
    fn mmd_hand_values() {
        let w = LossWeights::default();
        assert_eq!(w.kernel_constant(1), 2.0);
        let zero = mmd_sq(&t1(&[0.0, 0.0]), &t1(&[0.0, 0.0]), &w).unwrap();
        assert!(zero.abs() <= 1e-12);
        let v = mmd_sq(&t1(&[1.0, 2.0]), &t1(&[0.0, 0.0]), &w).unwrap();
        assert!((v - 2.0 / 3.0).abs() <= 1e-12, "{v}");
        let swapped = mmd_sq(&t1(&[0.0, 0.0]), &t1(&[1.0, 2.0]), &w).unwrap();
        assert!((swapped - v).abs() <= 1e-15);
    }

    #[test]
    fn mmd_errors() {
        let w = LossWeights::default();
        assert!(matches!(mmd_sq(&t1(&[0.0]), &t1(&[1.0]), &w), Err(LossError::TooFewSamples(1))));
        let wide = Tensor::matrix(2, 2, vec![0.0; 4]);
        assert!(matches!(mmd_sq(&t1(&[0.0, 1.0]), &wide, &w), Err(LossError::DimMismatch(1, 2))));
    }

    #[test]
    fn kernel_values() {
        let a = [0.3; 12];
        assert_eq!(imq_kernel(&a, &a, 1.0).unwrap(), 1.0);
        let mut b = [0.0; 12];
        b[0] = 24f64.sqrt();
        let k = imq_kernel(&[0.0; 12], &b, 1.0).unwrap();
        assert!((k - 0.5).abs() < 1e-15);
        let x = [0.1, -2.0, 3.3];
        let y = [1.0, 0.5, -0.2];
        assert_eq!(imq_kernel(&x, &y, 0.7).unwrap(), imq_kernel(&y, &x, 0.7).unwrap());
        assert!(imq_kernel(&x, &y, 0.7).unwrap() > imq_kernel(&x, &[2.0, 0.5, -0.2], 0.7).unwrap());
        assert!(matches!(imq_kernel(&x, &a, 1.0), Err(LossError::DimMismatch(3, 12))));
    }

    #[test]
    fn equivalence_hand_value() {
        // m=1, Q=3, T=1, L=2
        let f = Tensor::new(vec![1, 3, 1, 2], vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(equivalence_loss(&f).unwrap(), 2.0);
        let same = Tensor::new(vec![2, 3, 2, 2], vec![0.5; 24]).unwrap();
        assert_eq!(equivalence_loss(&same).unwrap(), 0.0);
        let one = Tensor::new(vec![1, 1, 1, 2], vec![0.0; 2]).unwrap();
        assert!(matches!(equivalence_loss(&one), Err(LossError::QTooSmall(1))));
    }

    #[test]
    fn decoder_hand_values() {
        let decoded = Tensor::new(vec![1, 1, 1, 240], vec![1.0; 240]).unwrap();
        let targets = Tensor::new(vec![1, 1, 240], vec![0.0; 240]).unwrap();
        assert_eq!(decoder_loss(&decoded, &targets).unwrap(), 240.0);
        assert!(matches!(decoder_loss(&targets, &targets), Err(LossError::ShapeMismatch(_))));
        let doubled = Tensor::new(vec![1, 2, 1, 240], vec![1.0; 480]).unwrap();
        assert_eq!(decoder_loss(&doubled, &targets).unwrap(), 480.0);
    }

    #[test]
    fn global_hand_values() {
        let w = LossWeights::default();
        assert_eq!(global_loss((2.0, 0.5, 1.0), &w).d_global, 20.5);
        let zero = LossWeights {
            lambda_mmd: 0.0,
            lambda_d: 0.0,
            ..w
        };
        assert_eq!(global_loss((2.0, 0.5, 1.0), &zero).d_global, 2.0);
        assert_eq!(global_loss((0.0, 0.0, 0.0), &w).d_global, 0.0);
    }

    #[test]
    fn laplace_scale_gives_unit_variance() {
        assert!((2.0 * LAPLACE_SCALE * LAPLACE_SCALE - 1.0).abs() < 1e-15);
        assert!((LAPLACE_SCALE - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn laplace_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = laplace_prior_sample(100_000, 3, &mut rng);
        for d in 0..3 {
            let col: Vec<f64> = s.data().iter().skip(d).step_by(3).copied().collect();
            let n = col.len() as f64;
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            let m4 = col.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
            let kurt = m4 / (var * var) - 3.0;
            assert!((0.97..=1.03).contains(&var), "var {var}");
            assert!((2.7..=3.3).contains(&kurt), "kurtosis {kurt}");
        }
    }

    fn rand_matrix(rows: usize, cols: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.5..1.5)).collect())
    }

    #[test]
    fn tape_versions_match_plain_functions() {
        let w = LossWeights::default();
        let z = rand_matrix(7, 4, 1);
        let y = rand_matrix(7, 4, 2);
        let mut tape = Tape::<f64>::new();
        let zv = tape.leaf(z.clone());
        let mv = mmd_sq_on(&mut tape, zv, &y, &w).unwrap();
        let plain = mmd_sq(&z, &y, &w).unwrap();
        assert!((tape.value(mv).item() - plain).abs() < 1e-14);

        let clones: Vec<_> = (0..3).map(|q| rand_matrix(6, 4, 10 + q)).collect();
        let vars: Vec<_> = clones.iter().map(|c| tape.leaf(c.clone())).collect();
        let ev = equivalence_loss_on(&mut tape, &vars).unwrap();
        let mut stacked = Vec::new();
        for c in &clones {
            stacked.extend_from_slice(c.data());
        }
        // one item, three clones, six frames, four dims
        let f = Tensor::new(vec![1, 3, 6, 4], stacked).unwrap();
        assert!((tape.value(ev).item() - equivalence_loss(&f).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn mmd_gradient_matches_finite_differences() {
        let w = LossWeights {
            kernel_scale: 0.8,
            ..LossWeights::default()
        };
        let y = rand_matrix(6, 3, 4);
        for seed in 0..3 {
            let z = rand_matrix(6, 3, 20 + seed);
            let err = grad_check(|t, x| Ok(mmd_sq_on(t, x, &y, &w).expect("mmd")), &z, 1e-5).unwrap();
            assert!(err <= 1e-6, "{err}");
        }
    }

    #[test]
    fn permutation_statistic_matches_relabelled_mmd() {
        let w = LossWeights::default();
        let z = rand_matrix(10, 3, 1);
        let y = rand_matrix(10, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = mmd_permutation_test(&z, &y, &w, 50, &mut rng).unwrap();
        assert_eq!(out.null.len(), 50);
        assert!((out.statistic - mmd_sq(&z, &y, &w).unwrap()).abs() < 1e-15);
        let n = 20;
        let mut pooled = z.data().to_vec();
        pooled.extend_from_slice(y.data());
        let gram = imq_gram_values(&pooled, &pooled, n, n, 3, w.kernel_constant(3), true);
        let total: f64 = gram.iter().sum();
        let identity: Vec<usize> = (0..n).collect();
        assert!((pooled_statistic(&gram, n, total, &identity) - out.statistic).abs() < 1e-12);
        let q = out.null_quantile(0.95);
        assert!(out.null.iter().filter(|&&v| v <= q).count() >= 48);
    }
}
