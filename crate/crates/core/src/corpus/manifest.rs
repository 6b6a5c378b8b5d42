//! JSON-lines manifest: an optional `{"seed": N}` header followed by one
//! entry per line. Relative paths resolve against the manifest's directory.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CorpusError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloneSpec {
    #[serde(rename = "id")]
    pub utterance_id: String,
    #[serde(rename = "clean")]
    pub clean_path: PathBuf,
    /// Candidate noise files; each clone draws its sources from this pool.
    #[serde(rename = "noises")]
    pub noise_paths: Vec<PathBuf>,
    pub snr_db: f64,
}

impl CloneSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.noise_paths.is_empty() {
            return Err(CorpusError::InvalidSpec(format!("{}: no noise files", self.utterance_id)));
        }
        if !self.snr_db.is_finite() {
            return Err(CorpusError::InvalidSpec(format!("{}: snr_db is not finite", self.utterance_id)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub entries: Vec<CloneSpec>,
    pub seed: u64,
    /// Directory that relative paths are resolved against.
    pub root: PathBuf,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    seed: u64,
}

impl Manifest {
    pub fn new(entries: Vec<CloneSpec>, seed: u64, root: impl Into<PathBuf>) -> Self {
        Self {
            entries,
            seed,
            root: root.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.root.join(path)
        }
    }

    /// Unique ids, valid entries, and every referenced file present.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            e.validate()?;
            if !seen.insert(e.utterance_id.as_str()) {
                return Err(CorpusError::InvalidSpec(format!("duplicate id {}", e.utterance_id)));
            }
        }
        for e in &self.entries {
            for p in std::iter::once(&e.clean_path).chain(&e.noise_paths) {
                let full = self.resolve(p);
                if !full.is_file() {
                    return Err(CorpusError::MissingFile(full));
                }
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&Header { seed: self.seed }).expect("header serializes");
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    /// Parses manifest text without touching the file system.
    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self, CorpusError> {
        let mut entries = Vec::new();
        let mut seed = 0;
        let mut first = true;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let err = |e: serde_json::Error| CorpusError::ParseError {
                line: i + 1,
                message: e.to_string(),
            };
            let value: serde_json::Value = serde_json::from_str(line).map_err(err)?;
            if first && value.get("id").is_none() && value.get("seed").is_some() {
                seed = serde_json::from_value::<Header>(value).map_err(err)?.seed;
            } else {
                entries.push(serde_json::from_value(value).map_err(err)?);
            }
            first = false;
        }
        Ok(Self::new(entries, seed, root))
    }
}

pub fn load_manifest(path: &Path) -> Result<Manifest, CorpusError> {
    let text = fs::read_to_string(path)?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let m = Manifest::parse(&text, root)?;
    m.validate()?;
    Ok(m)
}

pub fn save_manifest(manifest: &Manifest, path: &Path) -> Result<(), CorpusError> {
    let mut f = fs::File::create(path)?;
    f.write_all(manifest.to_jsonl().as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(id: &str, snr: f64) -> CloneSpec {
        CloneSpec {
            utterance_id: id.into(),
            clean_path: format!("clean/{id}.wav").into(),
            noise_paths: vec!["noise/a.wav".into(), "noise/b.wav".into()],
            snr_db: snr,
        }
    }

    #[test]
    fn keys_match_the_documented_format() {
        let line = serde_json::to_string(&spec("u1", 5.0)).unwrap();
        assert_eq!(line, r#"{"id":"u1","clean":"clean/u1.wav","noises":["noise/a.wav","noise/b.wav"],"snr_db":5.0}"#);
    }

    #[test]
    fn text_roundtrip() {
        let m = Manifest::new(vec![spec("a", 0.0), spec("b", 0.1 + 0.2), spec("c", -7.25)], 42, "/x");
        assert_eq!(Manifest::parse(&m.to_jsonl(), "/x").unwrap(), m);
    }

    #[test]
    fn header_is_optional() {
        let text = serde_json::to_string(&spec("a", 1.0)).unwrap();
        let m = Manifest::parse(&text, "").unwrap();
        assert_eq!(m.seed, 0);
        assert_eq!(m.len(), 1);
    }

    #[test]
    fn parse_error_names_line() {
        let good = serde_json::to_string(&spec("a", 1.0)).unwrap();
        let text = format!("{{\"seed\":1}}\n{good}\n\n{{\"id\": \"b\", oops}}\n");
        match Manifest::parse(&text, "") {
            Err(CorpusError::ParseError { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        let missing_key = r#"{"id":"a","clean":"x.wav","snr_db":1}"#;
        assert!(matches!(Manifest::parse(missing_key, ""), Err(CorpusError::ParseError { line: 1, .. })));
    }

    #[test]
    fn missing_file_detected_at_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        save_manifest(&Manifest::new(vec![spec("a", 1.0)], 3, dir.path()), &path).unwrap();
        match load_manifest(&path) {
            Err(CorpusError::MissingFile(p)) => assert!(p.ends_with("clean/a.wav")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let m = Manifest::new(vec![spec("a", 1.0), spec("a", 2.0)], 0, "");
        assert!(matches!(m.validate(), Err(CorpusError::InvalidSpec(_))));
    }
}
