//! Flat checkpoint format: `params.json` lists named arrays with their
//! shapes and element offsets into `params.f64le`, a little-endian blob of
//! 64-bit floats stored back to back in manifest order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DiffError, Tensor};

pub const MANIFEST_FILE: &str = "params.json";
pub const BLOB_FILE: &str = "params.f64le";

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in elements, not bytes.
    pub offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CheckpointManifest {
    pub format: String,
    pub tensors: Vec<TensorEntry>,
    pub blob_sha256: String,
    /// Caller-defined metadata (the model stores its head registry here).
    #[serde(default)]
    pub extra: serde_json::Value,
}

pub fn write_named_tensors(
    dir: &Path,
    tensors: &BTreeMap<String, Tensor>,
    extra: serde_json::Value,
) -> Result<(), DiffError> {
    fs::create_dir_all(dir)?;
    let mut blob = Vec::new();
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0;
    for (name, t) in tensors {
        entries.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.numel();
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        format: "neuroclip-params-v1".into(),
        tensors: entries,
        blob_sha256: hex::encode(Sha256::digest(&blob)),
        extra,
    };
    fs::write(dir.join(BLOB_FILE), &blob)?;
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| DiffError::Checkpoint(e.to_string()))?;
    fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(())
}

pub fn read_named_tensors(dir: &Path) -> Result<(BTreeMap<String, Tensor>, CheckpointManifest), DiffError> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text).map_err(|e| DiffError::Checkpoint(e.to_string()))?;
    let blob = fs::read(dir.join(BLOB_FILE))?;
    if hex::encode(Sha256::digest(&blob)) != manifest.blob_sha256 {
        return Err(DiffError::Checkpoint("blob checksum mismatch".into()));
    }
    if blob.len() % 8 != 0 {
        return Err(DiffError::Checkpoint("blob length is not a multiple of 8".into()));
    }
    let values: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let mut out = BTreeMap::new();
    for e in &manifest.tensors {
        let n: usize = e.shape.iter().product();
        let data = values
            .get(e.offset..e.offset + n)
            .ok_or_else(|| DiffError::Checkpoint(format!("tensor {} exceeds blob", e.name)))?;
        out.insert(e.name.clone(), Tensor::new(e.shape.clone(), data.to_vec())?);
    }
    Ok((out, manifest))
}
