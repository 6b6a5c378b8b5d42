//! Synthetic desk-scale corpus: harmonic pseudo-speech plus white, pink and
//! babble noise.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{CloneSpec, CorpusError, Manifest};
use crate::audio::{save_wav, AudioBuffer, SAMPLE_RATE_HZ};
use crate::exec::Exec;
use crate::rng;

pub const DEFAULT_SNR_LIST: [f64; 4] = [0.0, 5.0, 10.0, 15.0];

const SR: f64 = SAMPLE_RATE_HZ as f64;
const NOISE_RMS: f64 = 0.1;
const SPEECH_PEAK: f64 = 0.5;
const BREATH: f64 = 0.03;


#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub snr_db_list: Vec<f64>,
    pub min_seconds: f64,
    pub max_seconds: f64,
    pub noise_seconds: f64,
    pub noise_files_per_kind: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            snr_db_list: DEFAULT_SNR_LIST.to_vec(),
            min_seconds: 1.0,
            max_seconds: 3.0,
            noise_seconds: 4.0,
            noise_files_per_kind: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseKind {
    White,
    Pink,
    Babble,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 3] = [NoiseKind::White, NoiseKind::Pink, NoiseKind::Babble];
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseKind::White => "white",
            NoiseKind::Pink => "pink",
            NoiseKind::Babble => "babble",
        })
    }
}

/// Harmonic source with a drifting f0 in 90-250 Hz, 2-4 formant peaks and a
/// 2-6 Hz syllable envelope, peak-normalized to 0.5.
pub fn pseudo_speech<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f32> {
    let f0 = rng.gen_range(90.0..250.0);
    let drift_rate = rng.gen_range(0.3..1.2);
    let drift_phase = rng.gen_range(0.0..2.0 * PI);
    let syllable_rate = rng.gen_range(2.0..6.0);
    let syllable_phase = rng.gen_range(0.0..2.0 * PI);
    const FORMANT_RANGES: [(f64, f64); 4] = [(300.0, 900.0), (900.0, 2300.0), (2300.0, 3300.0), (3300.0, 4500.0)];
    let n_formants = rng.gen_range(2..=4);
    let formants: Vec<(f64, f64)> = FORMANT_RANGES[..n_formants]
        .iter()
        .map(|&(lo, hi)| (rng.gen_range(lo..hi), rng.gen_range(60.0..200.0)))
        .collect();

    let max_harmonic = ((7800.0 / (f0 * 1.08)) as usize).max(1);
    let amps: Vec<f64> = (1..=max_harmonic)
        .map(|h| {
            let f = h as f64 * f0;
            formants
                .iter()
                .map(|&(c, bw)| (-0.5 * ((f - c) / bw).powi(2)).exp())
                .sum::<f64>()
                + 0.02 / h as f64
        })
        .collect();

    let mut phase = rng.gen_range(0.0..2.0 * PI);
    let mut out = Vec::with_capacity(len);
    for k in 0..len {
        let t = k as f64 / SR;
        let f = f0 * (1.0 + 0.08 * (2.0 * PI * drift_rate * t + drift_phase).sin());
        phase = (phase + 2.0 * PI * f / SR) % (2.0 * PI);
        // sin(h*phase) by the Chebyshev recurrence.
        let (s1, c1) = phase.sin_cos();
        let (mut prev, mut cur) = (0.0, s1);
        let mut v = 0.0;
        for &a in &amps {
            v += a * cur;
            let next = 2.0 * c1 * cur - prev;
            prev = cur;
            cur = next;
        }
        let env = 0.05 + 0.95 * 0.5 * (1.0 - (2.0 * PI * syllable_rate * t + syllable_phase).cos());
        let breath: f64 = rng.sample::<f64, _>(StandardNormal) * BREATH;
        out.push(env * (v + breath));
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    out.into_iter().map(|v| (v * SPEECH_PEAK / peak) as f32).collect()
}

/// Gaussian noise with power spectral density proportional to `1/f`.
pub fn pink_noise<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    let mut spec = vec![Complex::new(0.0, 0.0); len];
    for k in 1..=len / 2 {
        let scale = 1.0 / (k as f64).sqrt();
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = if 2 * k == len { 0.0 } else { rng.sample(StandardNormal) };
        spec[k] = Complex::new(re * scale, im * scale);
        spec[len - k] = spec[k].conj();
    }
    let fft = FftPlanner::new().plan_fft_inverse(len);
    fft.process(&mut spec);
    spec.into_iter().map(|c| c.re).collect()
}

pub fn noise_signal<R: Rng + ?Sized>(kind: NoiseKind, len: usize, rng: &mut R) -> Vec<f32> {
    let raw: Vec<f64> = match kind {
        NoiseKind::White => (0..len).map(|_| rng.sample(StandardNormal)).collect(),
        NoiseKind::Pink => pink_noise(len, rng),
        NoiseKind::Babble => {
            let talkers = rng.gen_range(5..=8);
            let mut acc = vec![0.0f64; len];
            for _ in 0..talkers {
                for (a, v) in acc.iter_mut().zip(pseudo_speech(len, rng)) {
                    *a += v as f64;
                }
            }
            acc
        }
    };
    let rms = (raw.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
    raw.into_iter().map(|v| (v * NOISE_RMS / rms) as f32).collect()
}

fn write(path: &Path, samples: Vec<f32>) -> Result<(), CorpusError> {
    let buf = AudioBuffer::new(samples)?;
    save_wav(&buf, path).map_err(|source| CorpusError::Audio {
        path: path.to_path_buf(),
        source,
    })
}

pub fn synth_corpus(out_dir: &Path, n_utterances: usize, seed: u64) -> Result<Manifest, CorpusError> {
    synth_corpus_with(out_dir, n_utterances, seed, &SynthConfig::default(), Exec::default())
}

/// Writes `clean/*.wav`, `noise/*.wav` and `manifest.jsonl` under `out_dir`.
/// Generates nothing when `n_utterances` is zero.
pub fn synth_corpus_with(
    out_dir: &Path,
    n_utterances: usize,
    seed: u64,
    config: &SynthConfig,
    exec: Exec,
) -> Result<Manifest, CorpusError> {
    if config.snr_db_list.is_empty() || config.snr_db_list.iter().any(|s| !s.is_finite()) {
        return Err(CorpusError::InvalidSpec(format!("bad SNR list {:?}", config.snr_db_list)));
    }
    if !(config.min_seconds > 0.0 && config.min_seconds <= config.max_seconds) || config.noise_files_per_kind == 0 {
        return Err(CorpusError::InvalidSpec(format!("{config:?}")));
    }
    if n_utterances == 0 {
        return Ok(Manifest::new(Vec::new(), seed, out_dir));
    }
    fs::create_dir_all(out_dir.join("clean"))?;
    fs::create_dir_all(out_dir.join("noise"))?;

    let noise_jobs: Vec<(NoiseKind, usize)> = NoiseKind::ALL
        .iter()
        .flat_map(|&k| (0..config.noise_files_per_kind).map(move |i| (k, i)))
        .collect();
    let noise_len = (config.noise_seconds * SR) as usize;
    let noise_paths: Vec<PathBuf> = noise_jobs
        .iter()
        .map(|(k, i)| PathBuf::from(format!("noise/{k}_{i}.wav")))
        .collect();
    let jobs = &noise_jobs;
    exec.map_range(jobs.len(), |j| {
        let (kind, _) = jobs[j];
        let mut r = rng::stream(seed, "synth-noise", j as u64);
        write(&out_dir.join(&noise_paths[j]), noise_signal(kind, noise_len, &mut r))
    })
    .into_iter()
    .collect::<Result<(), _>>()?;

    let entries = exec
        .map_range(n_utterances, |i| {
            let mut r = rng::stream(seed, "synth-utterance", i as u64);
            let secs = r.gen_range(config.min_seconds..=config.max_seconds);
            let len = (secs * SR) as usize;
            let snr = config.snr_db_list[r.gen_range(0..config.snr_db_list.len())];
            let id = format!("utt_{i:05}");
            let clean = PathBuf::from(format!("clean/{id}.wav"));
            write(&out_dir.join(&clean), pseudo_speech(len, &mut r))?;
            Ok(CloneSpec {
                utterance_id: id,
                clean_path: clean,
                noise_paths: noise_paths.clone(),
                snr_db: snr,
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>, CorpusError>>()?;

    let manifest = Manifest::new(entries, seed, out_dir);
    super::save_manifest(&manifest, &out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}
