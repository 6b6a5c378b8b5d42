use nalgebra::DMatrix;

use super::AudioError;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters with centers equally spaced on the mel scale.
///
/// Filter `k` rises linearly (in Hz) from center `k - 1` to a peak of 1.0 at
/// center `k` and falls back to zero at center `k + 1`, where centers `-1`
/// and `n_mels` are `fmin` and `fmax`.
#[derive(Clone, Debug, PartialEq)]
pub struct MelFilterbank {
    weights: Vec<f64>,
    n_mels: usize,
    n_fft: usize,
    sample_rate_hz: u32,
    fmin_hz: f64,
    fmax_hz: f64,
    centers_hz: Vec<f64>,
}

pub fn build_mel_filterbank(
    n_fft: usize,
    n_mels: usize,
    fmin_hz: f64,
    fmax_hz: f64,
    sample_rate_hz: u32,
) -> Result<MelFilterbank, AudioError> {
    let nyquist = sample_rate_hz as f64 / 2.0;
    if !(0.0 <= fmin_hz && fmin_hz < fmax_hz && fmax_hz <= nyquist) {
        return Err(AudioError::InvalidRange(format!(
            "need 0 <= fmin < fmax <= {nyquist}, got fmin={fmin_hz} fmax={fmax_hz}"
        )));
    }
    if n_mels == 0 {
        return Err(AudioError::InvalidRange("n_mels must be at least 1".into()));
    }
    if !n_fft.is_power_of_two() || n_fft < 2 {
        return Err(AudioError::InvalidRange(format!("n_fft={n_fft} is not a power of two")));
    }

    let (mel_lo, mel_hi) = (hz_to_mel(fmin_hz), hz_to_mel(fmax_hz));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let n_bins = n_fft / 2 + 1;
    let bin_hz = sample_rate_hz as f64 / n_fft as f64;

    let mut weights = vec![0.0; n_mels * n_bins];
    for k in 0..n_mels {
        let (lo, center, hi) = (edges[k], edges[k + 1], edges[k + 2]);
        for j in 0..n_bins {
            let f = j as f64 * bin_hz;
            let rising = (f - lo) / (center - lo);
            let falling = (hi - f) / (hi - center);
            weights[k * n_bins + j] = rising.min(falling).max(0.0);
        }
    }
    let fb = MelFilterbank {
        weights,
        n_mels,
        n_fft,
        sample_rate_hz,
        fmin_hz,
        fmax_hz,
        centers_hz: edges[1..=n_mels].to_vec(),
    };
    if let Some(k) = (0..n_mels).find(|&k| fb.row(k).iter().all(|&w| w == 0.0)) {
        return Err(AudioError::InvalidRange(format!(
            "filter {k} covers no FFT bin; use fewer mels or a larger n_fft"
        )));
    }
    Ok(fb)
}

impl MelFilterbank {
    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn fmin_hz(&self) -> f64 {
        self.fmin_hz
    }

    pub fn fmax_hz(&self) -> f64 {
        self.fmax_hz
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let n = self.n_bins();
        &self.weights[k * n..(k + 1) * n]
    }

    /// Row-major `n_mels x n_bins` weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Projects a one-sided power spectrum onto the mel bands.
    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        debug_assert_eq!(power.len(), self.n_bins());
        (0..self.n_mels)
            .map(|k| self.row(k).iter().zip(power).map(|(w, p)| w * p).sum())
            .collect()
    }

    pub fn as_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_mels, self.n_bins(), &self.weights)
    }

    /// Moore-Penrose pseudo-inverse, `n_bins x n_mels`.
    pub fn pseudo_inverse(&self) -> DMatrix<f64> {
        self.as_matrix()
            .pseudo_inverse(1e-12)
            .expect("non-negative epsilon")
    }
}
