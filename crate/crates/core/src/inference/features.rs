//! Feature files: `SFEA`, then `u32` LE version, L, T, hop_ms, then `T x L`
//! little-endian `f32` values, row-major.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::InferenceError;

pub const FEATURE_MAGIC: &[u8; 4] = b"SFEA";
pub const FEATURE_VERSION: u32 = 1;

/// Per-frame salient features of one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTrack {
    /// `frames x dim`, row-major.
    pub features: Vec<f32>,
    pub frames: usize,
    pub dim: usize,
    pub hop_ms: u32,
    pub source_id: String,
    pub checkpoint_id: String,
}

impl FeatureTrack {
    pub fn row(&self, t: usize) -> &[f32] {
        &self.features[t * self.dim..(t + 1) * self.dim]
    }

    /// First `k` frames.
    pub fn prefix(&self, k: usize) -> FeatureTrack {
        FeatureTrack {
            features: self.features[..k * self.dim].to_vec(),
            frames: k,
            ..self.clone()
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 4 * self.features.len());
        out.extend_from_slice(FEATURE_MAGIC);
        for v in [FEATURE_VERSION, self.dim as u32, self.frames as u32, self.hop_ms] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.features {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, InferenceError> {
        if bytes.len() < 4 {
            return Err(InferenceError::TruncatedFile);
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if &magic != FEATURE_MAGIC {
            return Err(InferenceError::BadMagic(magic));
        }
        if bytes.len() < 20 {
            return Err(InferenceError::TruncatedFile);
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        if word(0) != FEATURE_VERSION {
            return Err(InferenceError::VersionMismatch(word(0)));
        }
        let (dim, frames, hop_ms) = (word(1) as usize, word(2) as usize, word(3));
        let body = &bytes[20..];
        let expected = dim
            .checked_mul(frames)
            .and_then(|n| n.checked_mul(4))
            .ok_or(InferenceError::TruncatedFile)?;
        if body.len() < expected {
            return Err(InferenceError::TruncatedFile);
        }
        if body.len() > expected {
            return Err(InferenceError::ConfigMismatch(format!(
                "{} bytes after {frames} x {dim} features",
                body.len() - expected
            )));
        }
        Ok(Self {
            features: body
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            frames,
            dim,
            hop_ms,
            source_id: String::new(),
            checkpoint_id: String::new(),
        })
    }

    /// One frame per line, no header. Values print in shortest round-trip
    /// form.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for t in 0..self.frames {
            let row: Vec<String> = self.row(t).iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn export_features(track: &FeatureTrack, path: &Path) -> Result<(), InferenceError> {
    fs::write(path, track.to_bytes())?;
    Ok(())
}

pub fn export_features_csv(track: &FeatureTrack, path: &Path) -> Result<(), InferenceError> {
    let mut f = fs::File::create(path)?;
    f.write_all(track.to_csv().as_bytes())?;
    Ok(())
}

/// Reads a feature file; the source id is taken from the file stem.
pub fn import_features(path: &Path) -> Result<FeatureTrack, InferenceError> {
    let mut track = FeatureTrack::from_bytes(&fs::read(path)?)?;
    track.source_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(track)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn track() -> FeatureTrack {
        FeatureTrack {
            features: (0..36).map(|i| (i as f32 * 0.37).sin() / 3.0).collect(),
            frames: 3,
            dim: 12,
            hop_ms: 20,
            source_id: "utt".into(),
            checkpoint_id: "abc".into(),
        }
    }

    #[test]
    fn binary_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("utt.sfea");
        let t = track();
        export_features(&t, &p).unwrap();
        let back = import_features(&p).unwrap();
        assert_eq!(back.features.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), t.features.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!((back.dim, back.frames, back.hop_ms), (12, 3, 20));
        assert_eq!(back.source_id, "utt");
    }

    #[test]
    fn header_layout() {
        let b = track().to_bytes();
        assert_eq!(&b[..4], b"SFEA");
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 12);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(b[16..20].try_into().unwrap()), 20);
        assert_eq!(b.len(), 20 + 36 * 4);
    }

    #[test]
    fn csv_shape_and_values() {
        let t = track();
        let csv = t.to_csv();
        let rows: Vec<&str> = csv.lines().collect();
        assert_eq!(rows.len(), 3);
        for (r, line) in rows.iter().enumerate() {
            let vals: Vec<f32> = line.split(',').map(|v| v.parse().unwrap()).collect();
            assert_eq!(vals, t.row(r));
        }
    }

    #[test]
    fn corrupt_inputs() {
        let b = track().to_bytes();
        assert!(matches!(FeatureTrack::from_bytes(&b[..b.len() - 2]), Err(InferenceError::TruncatedFile)));
        assert!(matches!(FeatureTrack::from_bytes(&b[..10]), Err(InferenceError::TruncatedFile)));
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(FeatureTrack::from_bytes(&bad), Err(InferenceError::BadMagic(_))));
    }
}
