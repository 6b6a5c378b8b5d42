use serde::{Deserialize, Serialize};

use super::metrics::{excess_kurtosis_per_dim, mse, rmse, variance_per_dim};
use super::{Inference, InferenceError};
use crate::corpus::{mix_sources, LoadedCorpus};
use crate::rng;
use crate::Exec;

/// One utterance under one noise condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceReport {
    pub id: String,
    pub snr_db: f64,
    pub frames: usize,
    /// RMSE between features of the noisy and the clean input.
    pub cross_clone_rmse: f64,
    /// Decoded noisy-input features vs. clean frames, denormalized.
    pub mel_recon_mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnrSummary {
    pub snr_db: f64,
    pub cross_clone_rmse: f64,
    pub mel_recon_mse: f64,
}

/// Statistics of clean-input features pooled over every frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub utterances: usize,
    pub frames: usize,
    pub cross_clone_rmse: f64,
    pub mel_recon_mse: f64,
    /// Decoder error when the clean signal itself is encoded.
    pub clean_mel_recon_mse: f64,
    pub feature_variance: Vec<f64>,
    pub feature_excess_kurtosis: Vec<f64>,
    pub mean_feature_variance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint_id: String,
    pub seed: u64,
    pub snr_list: Vec<f64>,
    pub per_utterance: Vec<UtteranceReport>,
    pub per_snr: Vec<SnrSummary>,
    pub aggregate: AggregateReport,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn summary(&self, snr_db: f64) -> Option<&SnrSummary> {
        self.per_snr.iter().find(|s| s.snr_db == snr_db)
    }

    pub fn is_finite(&self) -> bool {
        let a = &self.aggregate;
        self.per_utterance
            .iter()
            .all(|u| u.cross_clone_rmse.is_finite() && u.mel_recon_mse.is_finite())
            && a.feature_variance.iter().chain(&a.feature_excess_kurtosis).all(|v| v.is_finite())
            && a.cross_clone_rmse.is_finite()
            && a.mel_recon_mse.is_finite()
    }
}

struct Clean {
    features: Vec<f32>,
    frames: usize,
    recon_sq: f64,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Noisy vs. clean comparison of every corpus entry at every SNR.
///
/// The noise placement for entry `k` comes from the stream
/// `("eval-noise", k)` and is re-created for each SNR, so conditions
/// differ only in level. Output order follows entry id, then `snr_list`.
pub fn evaluate(
    inference: &Inference,
    corpus: &LoadedCorpus,
    snr_list: &[f64],
    seed: u64,
    exec: Exec,
) -> Result<EvalReport, InferenceError> {
    if corpus.is_empty() {
        return Err(InferenceError::Empty("corpus has no entries".into()));
    }
    if snr_list.is_empty() {
        return Err(InferenceError::Empty("SNR list is empty".into()));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.sort_by(|&a, &b| corpus.entries[a].id.cmp(&corpus.entries[b].id));

    let results = exec.map_range(order.len(), |k| -> Result<(Clean, Vec<UtteranceReport>), InferenceError> {
        let idx = order[k];
        let entry = &corpus.entries[idx];
        let clean_frames = inference.frames(&entry.clean)?;
        let clean_track = inference.encode_frames(&clean_frames, &entry.id)?;
        let clean_recon = inference.reconstruct(&clean_track)?;
        let flat_clean: Vec<f32> = clean_frames.concat();
        let clean = Clean {
            recon_sq: mse(&clean_recon.concat(), &flat_clean),
            features: clean_track.features.clone(),
            frames: clean_track.frames,
        };
        let noises: Vec<_> = entry.noise_ids.iter().map(|&n| &corpus.noises[n]).collect();
        let mut reports = Vec::with_capacity(snr_list.len());
        for &snr in snr_list {
            let mut r = rng::stream(seed, "eval-noise", idx as u64);
            let noisy = mix_sources(&entry.clean, &noises, snr, &mut r)?;
            let track = inference.extract(&noisy.audio, &entry.id)?;
            let recon = inference.reconstruct(&track)?;
            reports.push(UtteranceReport {
                id: entry.id.clone(),
                snr_db: snr,
                frames: track.frames,
                cross_clone_rmse: rmse(&track.features, &clean_track.features),
                mel_recon_mse: mse(&recon.concat(), &flat_clean),
            });
        }
        Ok((clean, reports))
    });

    let mut cleans = Vec::with_capacity(results.len());
    let mut per_utterance = Vec::new();
    for r in results {
        let (c, reps) = r?;
        cleans.push(c);
        per_utterance.extend(reps);
    }

    let per_snr: Vec<SnrSummary> = snr_list
        .iter()
        .map(|&snr| {
            let sel = || per_utterance.iter().filter(move |u| u.snr_db == snr);
            SnrSummary {
                snr_db: snr,
                cross_clone_rmse: mean(sel().map(|u| u.cross_clone_rmse)),
                mel_recon_mse: mean(sel().map(|u| u.mel_recon_mse)),
            }
        })
        .collect();

    let dim = inference.checkpoint().encoder.feature_dim;
    let rows: Vec<&[f32]> = cleans.iter().flat_map(|c| c.features.chunks_exact(dim)).collect();
    let feature_variance = variance_per_dim(&rows, dim);
    let aggregate = AggregateReport {
        utterances: cleans.len(),
        frames: rows.len(),
        cross_clone_rmse: mean(per_utterance.iter().map(|u| u.cross_clone_rmse)),
        mel_recon_mse: mean(per_utterance.iter().map(|u| u.mel_recon_mse)),
        clean_mel_recon_mse: mean(cleans.iter().map(|c| c.recon_sq)),
        mean_feature_variance: mean(feature_variance.iter().copied()),
        feature_excess_kurtosis: excess_kurtosis_per_dim(&rows, dim),
        feature_variance,
    };
    debug_assert_eq!(aggregate.frames, cleans.iter().map(|c| c.frames).sum::<usize>());
    Ok(EvalReport {
        checkpoint_id: inference.checkpoint_id().to_string(),
        seed,
        snr_list: snr_list.to_vec(),
        per_utterance,
        per_snr,
        aggregate,
    })
}
