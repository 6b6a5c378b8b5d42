use crate::audio::{AudioBuffer, DualWindowFrame, FrontEnd, FRAME_LEN};
use crate::autodiff::Tensor;
use crate::model::{decode_sequence, encode_sequence, Checkpoint};

use super::{FeatureTrack, InferenceError};

/// A loaded checkpoint paired with the front end it was trained with.
#[derive(Debug)]
pub struct Inference {
    checkpoint: Checkpoint,
    frontend: FrontEnd,
    id: String,
}

impl Inference {
    pub fn new(checkpoint: Checkpoint) -> Result<Self, InferenceError> {
        let frontend = FrontEnd::new(&checkpoint.frontend)?;
        if frontend.frame_dim() != checkpoint.encoder.input_dim {
            return Err(InferenceError::ConfigMismatch(format!(
                "front end yields {} bins, encoder expects {}",
                frontend.frame_dim(),
                checkpoint.encoder.input_dim
            )));
        }
        let id = checkpoint.id();
        Ok(Self {
            checkpoint,
            frontend,
            id,
        })
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.checkpoint
    }

    pub fn frontend(&self) -> &FrontEnd {
        &self.frontend
    }

    pub fn checkpoint_id(&self) -> &str {
        &self.id
    }

    /// Raw (unnormalized) `T x 240` frames of `audio`.
    pub fn frames(&self, audio: &AudioBuffer) -> Result<Vec<Vec<f32>>, InferenceError> {
        if audio.len() < FRAME_LEN {
            return Err(InferenceError::TooShort {
                len: audio.len(),
                needed: FRAME_LEN,
            });
        }
        Ok(self
            .frontend
            .frame_utterance(audio)?
            .frames
            .into_iter()
            .map(|f| f.bins)
            .collect())
    }

    /// Encodes pre-computed raw frames in one pass from a zero state.
    pub fn encode_frames(&self, frames: &[Vec<f32>], source_id: &str) -> Result<FeatureTrack, InferenceError> {
        let norm = &self.checkpoint.params.norm;
        let dim = self.checkpoint.encoder.input_dim;
        let data: Vec<f32> = frames.iter().flat_map(|f| norm.normalize(f)).collect();
        let input = Tensor::matrix(frames.len(), dim, data);
        let z = encode_sequence(&self.checkpoint.params, &self.checkpoint.encoder, &input)?;
        Ok(FeatureTrack {
            frames: frames.len(),
            dim: self.checkpoint.encoder.feature_dim,
            features: z.into_data(),
            hop_ms: DualWindowFrame::HOP_MS,
            source_id: source_id.to_string(),
            checkpoint_id: self.id.clone(),
        })
    }

    pub fn extract(&self, audio: &AudioBuffer, source_id: &str) -> Result<FeatureTrack, InferenceError> {
        self.encode_frames(&self.frames(audio)?, source_id)
    }

    /// Decodes a feature track to denormalized `T x 240` log-mel frames.
    pub fn reconstruct(&self, track: &FeatureTrack) -> Result<Vec<Vec<f32>>, InferenceError> {
        let l = self.checkpoint.encoder.feature_dim;
        if track.dim != l {
            return Err(InferenceError::ConfigMismatch(format!(
                "feature track has L={}, checkpoint has L={l}",
                track.dim
            )));
        }
        if track.features.len() != track.frames * track.dim {
            return Err(InferenceError::ConfigMismatch(format!(
                "{} values do not form {} x {} features",
                track.features.len(),
                track.frames,
                track.dim
            )));
        }
        if track.frames == 0 {
            return Ok(Vec::new());
        }
        let input = Tensor::matrix(track.frames, l, track.features.clone());
        let out = decode_sequence(&self.checkpoint.params, &self.checkpoint.encoder, &input)?;
        let dim = self.checkpoint.encoder.input_dim;
        Ok(out
            .data()
            .chunks_exact(dim)
            .map(|row| self.checkpoint.params.norm.denormalize(row))
            .collect())
    }
}

pub fn extract_features(checkpoint: &Checkpoint, audio: &AudioBuffer) -> Result<FeatureTrack, InferenceError> {
    Inference::new(checkpoint.clone())?.extract(audio, "")
}

pub fn reconstruct_mel(checkpoint: &Checkpoint, track: &FeatureTrack) -> Result<Vec<Vec<f32>>, InferenceError> {
    Inference::new(checkpoint.clone())?.reconstruct(track)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::FrontEndConfig;
    use crate::model::{init_params, EncoderConfig};

    fn checkpoint() -> Checkpoint {
        let encoder = EncoderConfig {
            hidden: 16,
            ..EncoderConfig::desk()
        };
        Checkpoint {
            encoder,
            frontend: FrontEndConfig::default(),
            params: init_params(&encoder, 4).unwrap(),
        }
    }

    fn audio(len: usize) -> AudioBuffer {
        AudioBuffer::new((0..len).map(|n| ((n as f32) * 0.05).sin() * 0.3 + ((n * 7) % 13) as f32 * 0.01).collect()).unwrap()
    }

    #[test]
    fn frame_count_and_prefix() {
        let inf = Inference::new(checkpoint()).unwrap();
        let full = inf.extract(&audio(16000), "a").unwrap();
        assert_eq!(full.frames, 49);
        assert_eq!(full.features.len(), 49 * 12);
        let short = inf.extract(&audio(640 + 320 * 9), "a").unwrap();
        assert_eq!(short.frames, 10);
        assert_eq!(short.features, full.prefix(10).features);
    }

    #[test]
    fn too_short() {
        let inf = Inference::new(checkpoint()).unwrap();
        assert!(matches!(
            inf.extract(&audio(639), "x"),
            Err(InferenceError::TooShort { len: 639, needed: 640 })
        ));
    }

    #[test]
    fn reconstruct_shape_determinism_and_mismatch() {
        let ck = checkpoint();
        let track = extract_features(&ck, &audio(4000)).unwrap();
        let a = reconstruct_mel(&ck, &track).unwrap();
        let b = reconstruct_mel(&ck, &track).unwrap();
        assert_eq!(a.len(), track.frames);
        assert!(a.iter().all(|r| r.len() == 240));
        assert_eq!(a, b);

        let wrong = FeatureTrack {
            dim: 8,
            features: vec![0.0; track.frames * 8],
            ..track
        };
        assert!(matches!(reconstruct_mel(&ck, &wrong), Err(InferenceError::ConfigMismatch(_))));
    }

    #[test]
    fn denormalization_applies_stats() {
        let mut ck = checkpoint();
        let track = extract_features(&ck, &audio(4000)).unwrap();
        let plain = reconstruct_mel(&ck, &track).unwrap();
        ck.params.norm.mean = vec![1.5; 240];
        ck.params.norm.std = vec![2.0; 240];
        let shifted = reconstruct_mel(&ck, &track).unwrap();
        for (p, s) in plain.iter().flatten().zip(shifted.iter().flatten()) {
            assert!((s - (p * 2.0 + 1.5)).abs() < 1e-5);
        }
    }
}
