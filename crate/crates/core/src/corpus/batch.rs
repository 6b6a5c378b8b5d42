use std::collections::HashMap;
use std::path::PathBuf;

use rand::seq::index::sample;
use rand::Rng;

use super::{mix_sources, CorpusError, Manifest};
use crate::audio::{load_wav, AudioBuffer, FrontEnd, FRAME_DIM, FRAME_HOP, FRAME_LEN};
use crate::exec::Exec;
use crate::model::NormStats;
use crate::rng;

/// Frames per training sequence.
pub const SEGMENT_FRAMES: usize = 6;
/// Samples spanned by a six-frame segment.
pub const SEGMENT_SAMPLES: usize = FRAME_LEN + (SEGMENT_FRAMES - 1) * FRAME_HOP;

#[derive(Clone, Debug)]
pub struct LoadedEntry {
    pub id: String,
    pub clean: AudioBuffer,
    /// Indices into [`LoadedCorpus::noises`].
    pub noise_ids: Vec<usize>,
    pub snr_db: f64,
}

/// A manifest with every WAV decoded; noise files shared between entries are
/// loaded once.
#[derive(Clone, Debug)]
pub struct LoadedCorpus {
    pub entries: Vec<LoadedEntry>,
    pub noises: Vec<AudioBuffer>,
    pub noise_paths: Vec<PathBuf>,
    pub seed: u64,
}

impl LoadedCorpus {
    pub fn load(manifest: &Manifest, exec: Exec) -> Result<Self, CorpusError> {
        manifest.validate()?;
        let mut noise_paths: Vec<PathBuf> = Vec::new();
        let mut index: HashMap<PathBuf, usize> = HashMap::new();
        let mut noise_ids = Vec::with_capacity(manifest.len());
        for e in &manifest.entries {
            let ids = e
                .noise_paths
                .iter()
                .map(|p| {
                    let full = manifest.resolve(p);
                    *index.entry(full.clone()).or_insert_with(|| {
                        noise_paths.push(full);
                        noise_paths.len() - 1
                    })
                })
                .collect::<Vec<_>>();
            noise_ids.push(ids);
        }
        let read = |path: PathBuf| {
            load_wav(&path).map_err(|source| CorpusError::Audio { path, source })
        };
        let noises = exec
            .map_vec(noise_paths.clone(), read)
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
        let cleans = exec
            .map_vec(manifest.entries.iter().map(|e| manifest.resolve(&e.clean_path)).collect(), read)
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
        let entries = manifest
            .entries
            .iter()
            .zip(cleans)
            .zip(noise_ids)
            .map(|((e, clean), noise_ids)| LoadedEntry {
                id: e.utterance_id.clone(),
                clean,
                noise_ids,
                snr_db: e.snr_db,
            })
            .collect();
        Ok(Self {
            entries,
            noises,
            noise_paths,
            seed: manifest.seed,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Per-bin statistics over every frame of every clean utterance.
    pub fn norm_stats(&self, frontend: &FrontEnd, exec: Exec) -> Result<NormStats, CorpusError> {
        let per_utt = exec
            .map_range(self.entries.len(), |i| {
                let clean = &self.entries[i].clean;
                if clean.len() < FRAME_LEN {
                    return Ok(Vec::new());
                }
                frontend.frame_utterance(clean).map(|s| s.to_matrix())
            })
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
        let frames = per_utt.iter().flat_map(|m| m.chunks_exact(FRAME_DIM));
        Ok(NormStats::from_frames(frames, FRAME_DIM))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchSpec {
    /// Items per batch (`m`).
    pub batch_size: usize,
    /// Noisy versions per item (`Q`).
    pub clones: usize,
    /// Frames per sequence.
    pub steps: usize,
    /// Noise sources summed into each mixture (`J`).
    pub sources: usize,
}

impl Default for BatchSpec {
    fn default() -> Self {
        Self {
            batch_size: 16,
            clones: 8,
            steps: SEGMENT_FRAMES,
            sources: 1,
        }
    }
}

impl BatchSpec {
    pub fn segment_samples(&self) -> usize {
        FRAME_LEN + (self.steps - 1) * FRAME_HOP
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseDraw {
    pub noise: usize,
    pub offset: usize,
    pub gain: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchItemMeta {
    pub source_id: String,
    pub entry: usize,
    /// First sample of the segment in the clean utterance.
    pub segment_start: usize,
    pub snr_db: f64,
    /// Noise draws of every clone.
    pub draws: Vec<Vec<NoiseDraw>>,
}

/// `m` items, each with `Q` noisy frame sequences and the clean target.
///
/// `clone_inputs` is laid out `[item][clone][frame][bin]` and `clean_targets`
/// `[item][frame][bin]`; both hold raw (unnormalized) log-mel values.
#[derive(Clone, Debug, PartialEq)]
pub struct CloneBatch {
    pub m: usize,
    pub q: usize,
    pub steps: usize,
    pub dim: usize,
    pub clone_inputs: Vec<f32>,
    pub clean_targets: Vec<f32>,
    pub meta: Vec<BatchItemMeta>,
}

impl CloneBatch {
    pub fn new(m: usize, q: usize, steps: usize, dim: usize, clone_inputs: Vec<f32>, clean_targets: Vec<f32>) -> Result<Self, CorpusError> {
        if clone_inputs.len() != m * q * steps * dim || clean_targets.len() != m * steps * dim || m * q * steps * dim == 0 {
            return Err(CorpusError::InvalidSpec(format!(
                "batch buffers ({}, {}) do not match m={m} q={q} steps={steps} dim={dim}",
                clone_inputs.len(),
                clean_targets.len()
            )));
        }
        Ok(Self {
            m,
            q,
            steps,
            dim,
            clone_inputs,
            clean_targets,
            meta: Vec::new(),
        })
    }

    /// `steps x dim` frames of clone `q` of item `i`.
    pub fn clone_sequence(&self, i: usize, q: usize) -> &[f32] {
        let block = self.steps * self.dim;
        let start = (i * self.q + q) * block;
        &self.clone_inputs[start..start + block]
    }

    pub fn target(&self, i: usize) -> &[f32] {
        let block = self.steps * self.dim;
        &self.clean_targets[i * block..(i + 1) * block]
    }
}

struct Item {
    clones: Vec<f32>,
    target: Vec<f32>,
    meta: BatchItemMeta,
}

fn build_item(
    corpus: &LoadedCorpus,
    spec: &BatchSpec,
    frontend: &FrontEnd,
    rng: &mut rng::Rng,
) -> Result<Item, CorpusError> {
    let entry_idx = rng.gen_range(0..corpus.entries.len());
    let entry = &corpus.entries[entry_idx];
    let needed = spec.segment_samples();
    if entry.clean.len() < needed {
        return Err(CorpusError::UtteranceTooShort {
            id: entry.id.clone(),
            len: entry.clean.len(),
            needed,
        });
    }
    let start = FRAME_HOP * rng.gen_range(0..=(entry.clean.len() - needed) / FRAME_HOP);
    let frames_of = |samples: &[f32]| -> Result<Vec<f32>, CorpusError> {
        let mut out = Vec::with_capacity(spec.steps * FRAME_DIM);
        for t in 0..spec.steps {
            out.extend(frontend.frame_bins(samples, start + t * FRAME_HOP)?);
        }
        Ok(out)
    };

    let target = frames_of(entry.clean.samples())?;
    let mut clones = Vec::with_capacity(spec.clones * target.len());
    let mut draws = Vec::with_capacity(spec.clones);
    let pool = entry.noise_ids.len();
    for _ in 0..spec.clones {
        let picks: Vec<usize> = if spec.sources <= pool {
            sample(rng, pool, spec.sources).into_iter().map(|k| entry.noise_ids[k]).collect()
        } else {
            (0..spec.sources).map(|_| entry.noise_ids[rng.gen_range(0..pool)]).collect()
        };
        let sources: Vec<&AudioBuffer> = picks.iter().map(|&n| &corpus.noises[n]).collect();
        let mix = mix_sources(&entry.clean, &sources, entry.snr_db, rng)?;
        clones.extend(frames_of(mix.audio.samples())?);
        draws.push(
            picks
                .iter()
                .zip(mix.offsets.iter().zip(&mix.gains))
                .map(|(&noise, (&offset, &gain))| NoiseDraw { noise, offset, gain })
                .collect(),
        );
    }
    Ok(Item {
        clones,
        target,
        meta: BatchItemMeta {
            source_id: entry.id.clone(),
            entry: entry_idx,
            segment_start: start,
            snr_db: entry.snr_db,
            draws,
        },
    })
}

/// Assembles batch number `batch_index`. Item `i` draws from its own random
/// stream, so the result does not depend on `exec`.
pub fn build_clone_batch(
    corpus: &LoadedCorpus,
    spec: &BatchSpec,
    frontend: &FrontEnd,
    seed: u64,
    batch_index: u64,
    exec: Exec,
) -> Result<CloneBatch, CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::ManifestEmpty);
    }
    if spec.batch_size == 0 || spec.clones == 0 || spec.steps == 0 || spec.sources == 0 {
        return Err(CorpusError::InvalidSpec(format!("{spec:?}")));
    }
    let items = exec
        .map_range(spec.batch_size, |i| {
            let mut r = rng::stream(seed, "clone-batch", (batch_index << 24) | i as u64);
            build_item(corpus, spec, frontend, &mut r)
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let mut batch = CloneBatch {
        m: spec.batch_size,
        q: spec.clones,
        steps: spec.steps,
        dim: FRAME_DIM,
        clone_inputs: Vec::with_capacity(spec.batch_size * spec.clones * spec.steps * FRAME_DIM),
        clean_targets: Vec::with_capacity(spec.batch_size * spec.steps * FRAME_DIM),
        meta: Vec::with_capacity(spec.batch_size),
    };
    for item in items {
        batch.clone_inputs.extend(item.clones);
        batch.clean_targets.extend(item.target);
        batch.meta.push(item.meta);
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::FrontEndConfig;
    use crate::corpus::synth::{noise_signal, pseudo_speech};
    use crate::corpus::NoiseKind;

    fn corpus(snr: f64) -> LoadedCorpus {
        let mut r = rng::stream(0, "fixture", 0);
        let entries = (0..3)
            .map(|i| LoadedEntry {
                id: format!("u{i}"),
                clean: AudioBuffer::new(pseudo_speech(8000 + 2000 * i, &mut r)).unwrap(),
                noise_ids: vec![0, 1],
                snr_db: snr,
            })
            .collect();
        let noises = [NoiseKind::White, NoiseKind::Pink]
            .iter()
            .map(|&k| AudioBuffer::new(noise_signal(k, 16_000, &mut r)).unwrap())
            .collect();
        LoadedCorpus {
            entries,
            noises,
            noise_paths: vec!["w".into(), "p".into()],
            seed: 0,
        }
    }

    fn frontend() -> FrontEnd {
        FrontEnd::new(&FrontEndConfig::default()).unwrap()
    }

    #[test]
    fn segment_length() {
        assert_eq!(SEGMENT_SAMPLES, 2240);
    }

    #[test]
    fn layout_and_targets() {
        let c = corpus(5.0);
        let fe = frontend();
        let spec = BatchSpec {
            batch_size: 4,
            clones: 3,
            ..BatchSpec::default()
        };
        let b = build_clone_batch(&c, &spec, &fe, 1, 0, Exec::Serial).unwrap();
        assert_eq!(b.clone_inputs.len(), 4 * 3 * 6 * 240);
        for (i, meta) in b.meta.iter().enumerate() {
            assert_eq!(meta.segment_start % FRAME_HOP, 0);
            assert_eq!(meta.draws.len(), 3);
            let clean = c.entries[meta.entry].clean.samples();
            let first = fe.frame_bins(clean, meta.segment_start).unwrap();
            assert_eq!(&b.target(i)[..240], first.as_slice());
            // Different noise draws give different clones.
            assert_ne!(b.clone_sequence(i, 0), b.clone_sequence(i, 1));
        }
    }

    #[test]
    fn high_snr_clones_match_clean_frames() {
        // At +100 dB the mixture differs from the clean signal only through
        // the S*N cross term, which is linear in the noise amplitude. Bins
        // well above the log floor agree to 1e-3; bins near the floor move by
        // at most a few hundredths.
        let c = corpus(100.0);
        let spec = BatchSpec {
            batch_size: 3,
            clones: 2,
            ..BatchSpec::default()
        };
        let b = build_clone_batch(&c, &spec, &frontend(), 2, 0, Exec::Serial).unwrap();
        let strong = (1000.0 * FrontEndConfig::default().floor).ln() as f32;
        for i in 0..3 {
            for q in 0..2 {
                for (a, t) in b.clone_sequence(i, q).iter().zip(b.target(i)) {
                    let tol = if *t >= strong { 1e-3 } else { 5e-2 };
                    assert!((a - t).abs() < tol, "item {i} clone {q}: {a} vs {t}");
                }
            }
        }
    }

    #[test]
    fn deterministic_and_schedule_independent() {
        let c = corpus(0.0);
        let fe = frontend();
        let spec = BatchSpec {
            batch_size: 5,
            clones: 2,
            ..BatchSpec::default()
        };
        let a = build_clone_batch(&c, &spec, &fe, 9, 3, Exec::Serial).unwrap();
        let b = build_clone_batch(&c, &spec, &fe, 9, 3, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        let other = build_clone_batch(&c, &spec, &fe, 9, 4, Exec::Serial).unwrap();
        assert_ne!(a.clone_inputs, other.clone_inputs);
    }

    #[test]
    fn single_clone_batch() {
        let spec = BatchSpec {
            batch_size: 2,
            clones: 1,
            ..BatchSpec::default()
        };
        let b = build_clone_batch(&corpus(5.0), &spec, &frontend(), 0, 0, Exec::Serial).unwrap();
        assert_eq!(b.clone_inputs.len(), 2 * 6 * 240);
    }

    #[test]
    fn errors() {
        let mut c = corpus(5.0);
        let fe = frontend();
        let spec = BatchSpec::default();
        c.entries[0].clean = AudioBuffer::new(vec![0.1; 2000]).unwrap();
        c.entries.truncate(1);
        assert!(matches!(
            build_clone_batch(&c, &spec, &fe, 0, 0, Exec::Serial),
            Err(CorpusError::UtteranceTooShort { needed: 2240, .. })
        ));
        c.entries.clear();
        assert!(matches!(build_clone_batch(&c, &spec, &fe, 0, 0, Exec::Serial), Err(CorpusError::ManifestEmpty)));
    }

    #[test]
    fn noise_residuals_are_uncorrelated() {
        // Subtracting the shared clean segment leaves independent white draws.
        let mut r = rng::stream(4, "fixture", 0);
        let clean = AudioBuffer::new(pseudo_speech(16_000, &mut r)).unwrap();
        let noise = AudioBuffer::new(noise_signal(NoiseKind::White, 64_000, &mut r)).unwrap();
        let draws: Vec<Vec<f64>> = (0..4)
            .map(|k| {
                let mut r = rng::stream(4, "draw", k);
                mix_sources(&clean, &[&noise], 5.0, &mut r).unwrap().noise
            })
            .collect();
        for a in 0..4 {
            for b in a + 1..4 {
                let dot: f64 = draws[a].iter().zip(&draws[b]).map(|(x, y)| x * y).sum();
                let na: f64 = draws[a].iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb: f64 = draws[b].iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((dot / (na * nb)).abs() < 0.2);
            }
        }
    }
}
