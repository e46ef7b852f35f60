//! Versioned binary checkpoints: magic, format version, a JSON manifest
//! (config hash, tensor names and shapes, free-form metadata) and the raw
//! little-endian `f64` tensor data in manifest order.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;
use crate::error::{Error, Result};
use crate::storage::write_atomic;

const MAGIC: &[u8; 4] = b"URCK";
pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Mat)>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config_hash: String,
    meta: serde_json::Value,
    tensors: Vec<(String, [usize; 2])>,
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let manifest = Manifest {
        config_hash: ck.config_hash.clone(),
        meta: ck.meta.clone(),
        tensors: ck.tensors.iter().map(|(n, m)| (n.clone(), [m.nrows(), m.ncols()])).collect(),
    };
    let json = serde_json::to_vec(&manifest)?;
    let floats: usize = ck.tensors.iter().map(|(_, m)| m.len()).sum();
    let mut bytes = Vec::with_capacity(16 + json.len() + floats * 8);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_FORMAT.to_le_bytes());
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for (_, m) in &ck.tensors {
        for v in m.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(path, &bytes)
}

/// Reads a checkpoint, refusing it when `expected_hash` is given and differs.
pub fn read_checkpoint(path: &Path, expected_hash: Option<&str>) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    let bad = |m: &str| Error::Format(format!("{}: {m}", path.display()));
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(bad("not a checkpoint"));
    }
    let format = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if format != CHECKPOINT_FORMAT {
        return Err(bad(&format!("format {format}, expected {CHECKPOINT_FORMAT}")));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let json = bytes.get(16..16 + len).ok_or_else(|| bad("truncated manifest"))?;
    let manifest: Manifest = serde_json::from_slice(json)?;
    if let Some(expected) = expected_hash {
        if expected != manifest.config_hash {
            return Err(Error::HashMismatch { expected: expected.to_string(), found: manifest.config_hash });
        }
    }
    let mut data = bytes[16 + len..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for (name, [r, c]) in manifest.tensors {
        let values: Vec<f64> = data.by_ref().take(r * c).collect();
        if values.len() != r * c {
            return Err(bad(&format!("tensor {name} truncated")));
        }
        tensors.push((name, Array2::from_shape_vec((r, c), values).expect("length checked")));
    }
    if data.next().is_some() {
        return Err(bad("trailing data"));
    }
    Ok(Checkpoint { config_hash: manifest.config_hash, meta: manifest.meta, tensors })
}
