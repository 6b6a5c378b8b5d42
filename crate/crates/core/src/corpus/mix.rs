use rand::Rng;

use super::CorpusError;
use crate::audio::AudioBuffer;

/// Noise shorter than this (0.5 s) cannot be wrapped around a longer clean
/// signal.
pub const MIN_NOISE_SAMPLES: usize = 8000;

/// Gain that puts noise of RMS `rms_noise` at `snr_db` below a signal of RMS
/// `rms_signal`.
pub fn snr_gain(rms_signal: f64, rms_noise: f64, snr_db: f64) -> f64 {
    rms_signal / rms_noise * 10f64.powf(-snr_db / 20.0)
}

/// `10 log10(sum x^2 / sum n^2)`.
pub fn measured_snr_db(signal: &[f32], noise: &[f64]) -> f64 {
    let ps: f64 = signal.iter().map(|&v| (v as f64) * (v as f64)).sum();
    let pn: f64 = noise.iter().map(|v| v * v).sum();
    10.0 * (ps / pn).log10()
}

/// A mixture together with the scaled noise that went into it.
#[derive(Clone, Debug)]
pub struct Mixture {
    pub audio: AudioBuffer,
    /// Total added noise, per sample.
    pub noise: Vec<f64>,
    /// Per-source gain applied to the raw noise samples.
    pub gains: Vec<f64>,
    /// Per-source start offset into the noise buffer.
    pub offsets: Vec<usize>,
}

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len().max(1) as f64).sqrt()
}

fn noise_segment<R: Rng + ?Sized>(noise: &AudioBuffer, len: usize, rng: &mut R) -> Result<(Vec<f64>, usize), CorpusError> {
    let n = noise.len();
    if n < len && n < MIN_NOISE_SAMPLES {
        return Err(CorpusError::NoiseTooShort {
            len: n,
            needed: len.min(MIN_NOISE_SAMPLES),
        });
    }
    if n == 0 {
        return Err(CorpusError::NoiseTooShort { len: 0, needed: 1 });
    }
    let s = noise.samples();
    if n >= len {
        let offset = rng.gen_range(0..=n - len);
        Ok((s[offset..offset + len].iter().map(|&v| v as f64).collect(), offset))
    } else {
        let offset = rng.gen_range(0..n);
        Ok(((0..len).map(|k| s[(offset + k) % n] as f64).collect(), offset))
    }
}

/// Mixes `J = noises.len()` sources into `clean` so that the total noise sits
/// `snr_db` below the clean signal. Every source gets the same power.
pub fn mix_sources<R: Rng + ?Sized>(
    clean: &AudioBuffer,
    noises: &[&AudioBuffer],
    snr_db: f64,
    rng: &mut R,
) -> Result<Mixture, CorpusError> {
    if noises.is_empty() {
        return Err(CorpusError::InvalidSpec("at least one noise source is required".into()));
    }
    if !snr_db.is_finite() {
        return Err(CorpusError::InvalidSpec(format!("snr_db {snr_db} is not finite")));
    }
    let rms_x = clean.rms();
    if rms_x == 0.0 {
        return Err(CorpusError::SilentSignal("clean"));
    }
    let len = clean.len();
    let mut total = vec![0.0f64; len];
    let mut unit_gains = Vec::with_capacity(noises.len());
    let mut offsets = Vec::with_capacity(noises.len());
    for noise in noises {
        let (seg, offset) = noise_segment(noise, len, rng)?;
        let r = rms(&seg);
        if r == 0.0 {
            return Err(CorpusError::SilentSignal("noise"));
        }
        for (t, v) in total.iter_mut().zip(&seg) {
            *t += v / r;
        }
        unit_gains.push(1.0 / r);
        offsets.push(offset);
    }
    let r_total = rms(&total);
    if r_total == 0.0 {
        return Err(CorpusError::SilentSignal("combined noise"));
    }
    let alpha = snr_gain(rms_x, r_total, snr_db);
    for v in &mut total {
        *v *= alpha;
    }
    let samples = clean
        .samples()
        .iter()
        .zip(&total)
        .map(|(&x, &n)| (x as f64 + n) as f32)
        .collect();
    Ok(Mixture {
        audio: AudioBuffer::new(samples)?,
        noise: total,
        gains: unit_gains.into_iter().map(|g| g * alpha).collect(),
        offsets,
    })
}

/// `x + alpha * n_segment` with `alpha = RMS(x)/RMS(n_segment) * 10^(-snr/20)`.
pub fn mix_at_snr<R: Rng + ?Sized>(
    clean: &AudioBuffer,
    noise: &AudioBuffer,
    snr_db: f64,
    rng: &mut R,
) -> Result<AudioBuffer, CorpusError> {
    Ok(mix_sources(clean, &[noise], snr_db, rng)?.audio)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn tone(len: usize, freq: f64, amp: f64) -> AudioBuffer {
        AudioBuffer::new(
            (0..len)
                .map(|k| (amp * (2.0 * std::f64::consts::PI * freq * k as f64 / 16000.0).sin()) as f32)
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn closed_form_gain() {
        let a = snr_gain(0.1, 0.2, 10.0);
        assert!((a - 0.5 * 10f64.powf(-0.5)).abs() < 1e-15);
        assert!((a - 0.158114).abs() < 1e-6);
    }

    #[test]
    fn zero_db_equal_rms_adds_noise_unchanged() {
        let x = AudioBuffer::new(vec![0.5, -0.5, 0.5, -0.5]).unwrap();
        let n = AudioBuffer::new(vec![0.5, 0.5, -0.5, -0.5]).unwrap();
        let mut r = rng::stream(0, "t", 0);
        let m = mix_sources(&x, &[&n], 0.0, &mut r).unwrap();
        assert!((m.gains[0] - 1.0).abs() < 1e-12);
        assert_eq!(m.audio.samples(), &[1.0, 0.0, 0.0, -1.0]);
    }

    #[test]
    fn silent_inputs_rejected() {
        let x = tone(1000, 440.0, 0.3);
        let mut r = rng::stream(0, "t", 0);
        let z = AudioBuffer::silence(1000);
        assert!(matches!(mix_at_snr(&x, &z, 5.0, &mut r), Err(CorpusError::SilentSignal(_))));
        assert!(matches!(mix_at_snr(&z, &x, 5.0, &mut r), Err(CorpusError::SilentSignal(_))));
    }

    #[test]
    fn short_noise_rules() {
        let x = tone(10_000, 440.0, 0.3);
        let mut r = rng::stream(0, "t", 0);
        let short = tone(4000, 300.0, 0.1);
        assert!(matches!(mix_at_snr(&x, &short, 5.0, &mut r), Err(CorpusError::NoiseTooShort { .. })));
        // Long enough to wrap.
        let wrap = tone(9000, 300.0, 0.1);
        let m = mix_sources(&x, &[&wrap], 5.0, &mut r).unwrap();
        assert!((measured_snr_db(x.samples(), &m.noise) - 5.0).abs() < 1e-6);
    }

    #[test]
    fn snr_is_exact_for_several_sources() {
        let x = tone(5000, 220.0, 0.4);
        let n1 = tone(12_000, 1300.0, 0.05);
        let n2 = tone(7000, 3100.0, 0.7);
        for (i, snr) in [-5.0, 0.0, 7.5, 20.0].into_iter().enumerate() {
            let mut r = rng::stream(1, "t", i as u64);
            let m = mix_sources(&x, &[&n1, &n2], snr, &mut r).unwrap();
            assert!((measured_snr_db(x.samples(), &m.noise) - snr).abs() < 1e-6);
        }
    }

    #[test]
    fn offset_is_seeded() {
        let x = tone(1000, 220.0, 0.4);
        let n = tone(16_000, 1300.0, 0.05);
        let a = mix_sources(&x, &[&n], 3.0, &mut rng::stream(5, "t", 0)).unwrap();
        let b = mix_sources(&x, &[&n], 3.0, &mut rng::stream(5, "t", 0)).unwrap();
        assert_eq!(a.offsets, b.offsets);
        assert_eq!(a.audio, b.audio);
    }
}
