//! Checkpoints: a JSON manifest plus one raw little-endian `f64` blob.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: u64,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    /// Blob file name, relative to the manifest.
    pub blob: String,
    pub params: BTreeMap<String, CheckpointEntry>,
}

fn blob_path(manifest: &Path, blob: &str) -> PathBuf {
    manifest.parent().unwrap_or(Path::new(".")).join(blob)
}

/// Write `store` to `manifest_path` (JSON) and a sibling `.bin` blob.
pub fn save_checkpoint(store: &ParamStore, manifest_path: &Path) -> Result<()> {
    let blob_name = format!(
        "{}.bin",
        manifest_path.file_stem().and_then(|s| s.to_str()).unwrap_or("params")
    );
    let mut blob = Vec::with_capacity(store.num_scalars() * 8);
    let mut params = BTreeMap::new();
    for p in store.iter() {
        params.insert(
            p.name.clone(),
            CheckpointEntry { shape: p.tensor.shape().to_vec(), offset: blob.len() as u64, trainable: p.trainable },
        );
        blob.extend(p.tensor.to_le_bytes());
    }
    let manifest = CheckpointManifest { blob: blob_name, params };
    if let Some(dir) = manifest_path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let bpath = blob_path(manifest_path, &manifest.blob);
    fs::write(&bpath, &blob).map_err(|e| Error::io(&bpath, e))?;
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(manifest_path, json).map_err(|e| Error::io(manifest_path, e))?;
    Ok(())
}

pub fn load_checkpoint(manifest_path: &Path) -> Result<ParamStore> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    let bpath = blob_path(manifest_path, &manifest.blob);
    let blob = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
    let mut store = ParamStore::new();
    for (name, entry) in manifest.params {
        let n: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start + n * 8;
        if end > blob.len() || entry.shape.contains(&0) {
            return Err(Error::format(&bpath, format!("parameter `{name}` lies outside the blob")));
        }
        let data = blob[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store.insert(name, Tensor::new(&entry.shape, data), entry.trainable)?;
    }
    Ok(store)
}
