//! Content-hash bookkeeping that lets a stage be skipped when its inputs and
//! outputs are unchanged since it last ran.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::output::write_json;

pub const LEDGER_FILE: &str = ".stages.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct StageRecord {
    inputs: String,
    /// Output path relative to the output directory, and its hash.
    outputs: BTreeMap<String, String>,
}

/// Incremental hasher over settings and file contents. Paths are not hashed,
/// so identical inputs in different directories hash the same.
#[derive(Default)]
pub struct InputHash(Sha256);

impl InputHash {
    pub fn new(stage: &str) -> Self {
        let mut h = Sha256::new();
        h.update(stage.as_bytes());
        Self(h)
    }

    pub fn settings<T: Serialize>(mut self, value: &T) -> Result<Self> {
        let bytes = serde_json::to_vec(value)?;
        self.0.update((bytes.len() as u64).to_le_bytes());
        self.0.update(&bytes);
        Ok(self)
    }

    pub fn file(mut self, path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.0.update((bytes.len() as u64).to_le_bytes());
        self.0.update(&bytes);
        Ok(self)
    }

    /// Every regular file directly inside `dir`, in name order.
    pub fn dir(mut self, dir: &Path) -> Result<Self> {
        for p in list_files(dir)? {
            self.0.update(p.file_name().unwrap_or_default().as_encoded_bytes());
            self = self.file(&p)?;
        }
        Ok(self)
    }

    pub fn finish(self) -> String {
        hex::encode(self.0.finalize())
    }
}

pub fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    if dir.is_dir() {
        for e in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
            let p = e?.path();
            if p.is_file() {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// The ledger stored as `.stages.json` in the output directory.
pub struct StageLedger {
    root: PathBuf,
    stages: BTreeMap<String, StageRecord>,
}

impl StageLedger {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(LEDGER_FILE);
        let stages = if path.exists() {
            let text = std::fs::read_to_string(&path)?;
            // an unreadable ledger only costs a rerun
            serde_json::from_str(&text).unwrap_or_default()
        } else {
            BTreeMap::new()
        };
        Ok(Self { root: root.to_path_buf(), stages })
    }

    /// True when the stage last ran on these inputs and its outputs are intact.
    pub fn is_fresh(&self, stage: &str, inputs: &str) -> bool {
        let Some(rec) = self.stages.get(stage) else { return false };
        rec.inputs == inputs
            && !rec.outputs.is_empty()
            && rec.outputs.iter().all(|(rel, h)| file_hash(&self.root.join(rel)).is_ok_and(|x| &x == h))
    }

    pub fn record(&mut self, stage: &str, inputs: String, outputs: &[PathBuf]) -> Result<()> {
        let mut map = BTreeMap::new();
        for p in outputs {
            let rel = p.strip_prefix(&self.root).unwrap_or(p).to_string_lossy().replace('\\', "/");
            map.insert(rel, file_hash(p)?);
        }
        self.stages.insert(stage.to_string(), StageRecord { inputs, outputs: map });
        write_json(&self.root.join(LEDGER_FILE), &self.stages)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn freshness_tracks_inputs_and_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        std::fs::write(&input, "a").unwrap();
        let out = dir.path().join("o.txt");
        std::fs::write(&out, "x").unwrap();

        let h1 = InputHash::new("s").settings(&1).unwrap().file(&input).unwrap().finish();
        let mut l = StageLedger::open(dir.path()).unwrap();
        assert!(!l.is_fresh("s", &h1));
        l.record("s", h1.clone(), std::slice::from_ref(&out)).unwrap();
        let l = StageLedger::open(dir.path()).unwrap();
        assert!(l.is_fresh("s", &h1));

        std::fs::write(&input, "b").unwrap();
        let h2 = InputHash::new("s").settings(&1).unwrap().file(&input).unwrap().finish();
        assert_ne!(h1, h2);
        assert!(!l.is_fresh("s", &h2));

        std::fs::write(&out, "tampered").unwrap();
        assert!(!l.is_fresh("s", &h1));
        let h3 = InputHash::new("s").settings(&2).unwrap().file(&input).unwrap().finish();
        assert_ne!(h2, h3);
    }
}
