use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const LEDGER_FILE: &str = "ledger.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub stage: String,
    pub config_hash: String,
    /// Artifact paths relative to the output directory.
    pub artifacts: Vec<PathBuf>,
    /// Content hash over the artifacts, in the manner of a git object id.
    pub artifact_version: String,
    pub wall_clock_secs: f64,
}

/// Ordered record of completed stages, kept at `<output_dir>/ledger.json`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLedger {
    pub entries: Vec<LedgerEntry>,
}

pub fn artifact_version(root: &Path, artifacts: &[PathBuf]) -> Result<String> {
    let mut sorted = artifacts.to_vec();
    sorted.sort();
    let mut h = Sha256::new();
    for rel in &sorted {
        let path = root.join(rel);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        h.update(rel.to_string_lossy().as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize())[..16].to_string())
}

impl RunLedger {
    pub fn load(out_dir: &Path) -> Result<Self> {
        let path = out_dir.join(LEDGER_FILE);
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, out_dir: &Path) -> Result<()> {
        let path = out_dir.join(LEDGER_FILE);
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        std::fs::write(&path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&path, e))
    }

    /// Most recent entry for `stage`.
    pub fn latest(&self, stage: &str) -> Option<&LedgerEntry> {
        self.entries.iter().rev().find(|e| e.stage == stage)
    }

    pub fn require(&self, stage: &str) -> Result<&LedgerEntry> {
        self.latest(stage).ok_or_else(|| Error::MissingPrerequisite { stage: stage.to_string() })
    }

    pub fn append(&mut self, entry: LedgerEntry) {
        self.entries.push(entry);
    }
}
