//! Columnar tensor files: raw little-endian `f32` data in `<name>.f32` plus a
//! `<name>.json` sidecar holding `{"shape": [...], "dtype": "f32le"}`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSidecar {
    pub shape: Vec<usize>,
    pub dtype: String,
}

fn paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{name}.f32")), dir.join(format!("{name}.json")))
}

pub fn write_tensor(dir: &Path, name: &str, shape: &[usize], data: &[f32]) -> Result<()> {
    let expected: usize = shape.iter().product();
    if expected != data.len() {
        return Err(Error::Shape(format!("{name}: shape {shape:?} holds {expected} values, got {}", data.len())));
    }
    let (bin, side) = paths(dir, name);
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(&bin, &bytes)?;
    let sidecar = TensorSidecar { shape: shape.to_vec(), dtype: "f32le".into() };
    write_atomic(&side, serde_json::to_string_pretty(&sidecar)?.as_bytes())
}

pub fn read_tensor(dir: &Path, name: &str) -> Result<(Vec<usize>, Vec<f32>)> {
    let (bin, side) = paths(dir, name);
    let sidecar: TensorSidecar = serde_json::from_slice(&fs::read(&side)?)?;
    if sidecar.dtype != "f32le" {
        return Err(Error::Format(format!("{name}: unsupported dtype {}", sidecar.dtype)));
    }
    let bytes = fs::read(&bin)?;
    let expected: usize = sidecar.shape.iter().product();
    if bytes.len() != expected * 4 {
        return Err(Error::Format(format!("{name}: {} bytes for shape {:?}", bytes.len(), sidecar.shape)));
    }
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok((sidecar.shape, data))
}

/// Writes via a temporary sibling and renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
