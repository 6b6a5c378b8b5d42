//! Griffin-Lim phase recovery on the 40 ms long-window STFT grid.

use nalgebra::DVector;
use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::InferenceError;
use crate::audio::{hann_window, AudioBuffer, MelFilterbank, FRAME_HOP, FRAME_LEN};
use crate::rng;

pub const DEFAULT_GL_ITERATIONS: usize = 60;

/// Peak level of the resynthesized waveform.
const OUTPUT_PEAK: f32 = 0.9;
/// Below this peak the output is left unscaled so silence stays silent.
const MIN_PEAK: f32 = 1e-4;
/// Overlap-add normalizer guard.
const MIN_WINDOW_ENERGY: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GriffinLimOutput {
    pub audio: AudioBuffer,
    /// `|| |STFT(y_k)| - A || / ||A||` after each iteration `k`.
    pub residuals: Vec<f64>,
}

/// Linear STFT magnitudes from an 80-bin log-mel track.
///
/// Energies are recovered with `exp(v) - floor`, mapped back to FFT bins
/// with the filterbank pseudo-inverse, clamped at zero and square-rooted.
pub fn mel_to_linear_magnitude(mel: &[Vec<f32>], fb: &MelFilterbank, floor: f64) -> Vec<Vec<f64>> {
    let pinv = fb.pseudo_inverse();
    mel.iter()
        .map(|frame| {
            let e = DVector::from_iterator(
                frame.len(),
                frame.iter().map(|&v| ((v as f64).exp() - floor).max(0.0)),
            );
            (&pinv * e).iter().map(|&p| p.max(0.0).sqrt()).collect()
        })
        .collect()
}

struct Stft {
    window: Vec<f64>,
    n_fft: usize,
    forward: std::sync::Arc<dyn rustfft::Fft<f64>>,
    inverse: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl Stft {
    fn new(n_fft: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            window: hann_window(FRAME_LEN),
            n_fft,
            forward: planner.plan_fft_forward(n_fft),
            inverse: planner.plan_fft_inverse(n_fft),
        }
    }

    fn analyze(&self, y: &[f64], frames: usize) -> Vec<Vec<Complex<f64>>> {
        (0..frames)
            .map(|t| {
                let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
                let start = t * FRAME_HOP;
                for (n, b) in buf.iter_mut().take(FRAME_LEN).enumerate() {
                    b.re = y[start + n] * self.window[n];
                }
                self.forward.process(&mut buf);
                buf.truncate(self.n_fft / 2 + 1);
                buf
            })
            .collect()
    }

    /// Least-squares inverse: `sum_t w * y_t / sum_t w^2`.
    fn synthesize(&self, spec: &[Vec<Complex<f64>>], len: usize) -> Vec<f64> {
        let mut num = vec![0.0; len];
        let mut den = vec![0.0; len];
        let scale = 1.0 / self.n_fft as f64;
        for (t, half) in spec.iter().enumerate() {
            let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
            buf[..half.len()].copy_from_slice(half);
            for k in 1..self.n_fft / 2 {
                buf[self.n_fft - k] = half[k].conj();
            }
            self.inverse.process(&mut buf);
            let start = t * FRAME_HOP;
            for n in 0..FRAME_LEN {
                let w = self.window[n];
                num[start + n] += w * buf[n].re * scale;
                den[start + n] += w * w;
            }
        }
        num.iter()
            .zip(&den)
            .map(|(&a, &d)| if d > MIN_WINDOW_ENERGY { a / d } else { 0.0 })
            .collect()
    }
}

/// Resynthesizes audio from the 80-bin long-window log-mel blocks.
///
/// `mel` holds one row per 20 ms frame. The initial phase is drawn from
/// a fixed random stream, so the output is deterministic.
pub fn griffin_lim(
    mel: &[Vec<f32>],
    fb: &MelFilterbank,
    floor: f64,
    iterations: usize,
) -> Result<GriffinLimOutput, InferenceError> {
    if iterations == 0 {
        return Err(InferenceError::InvalidIterations(0));
    }
    if let Some(bad) = mel.iter().find(|f| f.len() != fb.n_mels()) {
        return Err(InferenceError::ConfigMismatch(format!(
            "mel frame has {} bins, filterbank has {}",
            bad.len(),
            fb.n_mels()
        )));
    }
    if mel.is_empty() {
        return Ok(GriffinLimOutput {
            audio: AudioBuffer::silence(0),
            residuals: vec![0.0; iterations],
        });
    }
    let frames = mel.len();
    let len = FRAME_HOP * (frames - 1) + FRAME_LEN;
    let target = mel_to_linear_magnitude(mel, fb, floor);
    let target_norm = target.iter().flatten().map(|a| a * a).sum::<f64>().sqrt();
    let stft = Stft::new(fb.n_fft());

    let mut phase_rng = rng::stream(0, "griffin-lim", 0);
    let mut spec: Vec<Vec<Complex<f64>>> = target
        .iter()
        .map(|row| {
            row.iter()
                .map(|&a| Complex::from_polar(a, phase_rng.gen_range(0.0..std::f64::consts::TAU)))
                .collect()
        })
        .collect();

    let mut residuals = Vec::with_capacity(iterations);
    let mut y = Vec::new();
    for _ in 0..iterations {
        y = stft.synthesize(&spec, len);
        let rebuilt = stft.analyze(&y, frames);
        let mut err = 0.0;
        for ((row, target_row), out) in rebuilt.iter().zip(&target).zip(spec.iter_mut()) {
            for ((c, &a), o) in row.iter().zip(target_row).zip(out.iter_mut()) {
                let mag = c.norm();
                err += (mag - a) * (mag - a);
                *o = if mag > 0.0 { c * (a / mag) } else { Complex::new(a, 0.0) };
            }
        }
        residuals.push(if target_norm > 0.0 { err.sqrt() / target_norm } else { 0.0 });
    }

    let mut samples: Vec<f32> = y.iter().map(|&v| v as f32).collect();
    let peak = samples.iter().fold(0.0f32, |p, v| p.max(v.abs()));
    if peak > MIN_PEAK {
        let g = OUTPUT_PEAK / peak;
        samples.iter_mut().for_each(|v| *v *= g);
    }
    Ok(GriffinLimOutput {
        audio: AudioBuffer::new(samples).map_err(InferenceError::from)?,
        residuals,
    })
}
