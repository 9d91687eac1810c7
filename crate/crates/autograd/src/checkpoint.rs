//! Flat little-endian parameter dump plus a JSON manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AutogradError, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Element offset into the binary file.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub dtype: String,
    pub config_hash: String,
    pub tensors: Vec<TensorEntry>,
}

/// Writes `<stem>.bin` and `<stem>.json` into `dir`.
pub fn save_checkpoint<S: Scalar>(
    dir: &Path,
    stem: &str,
    params: &ParamStore<S>,
    config_hash: &str,
) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir)?;
    let mut bytes = Vec::with_capacity(params.num_scalars() * S::BYTES);
    let mut tensors = Vec::with_capacity(params.len());
    let mut offset = 0;
    for (name, t) in params.iter() {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.numel();
        for &v in t.data() {
            v.write_le(&mut bytes);
        }
    }
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_FORMAT_VERSION,
        dtype: S::DTYPE.to_string(),
        config_hash: config_hash.to_string(),
        tensors,
    };
    fs::write(dir.join(format!("{stem}.bin")), bytes)?;
    fs::write(
        dir.join(format!("{stem}.json")),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

pub fn load_checkpoint<S: Scalar>(dir: &Path, stem: &str) -> Result<(ParamStore<S>, CheckpointManifest)> {
    let manifest: CheckpointManifest =
        serde_json::from_str(&fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(AutogradError::Checkpoint(format!(
            "unsupported format version {}",
            manifest.format_version
        )));
    }
    if manifest.dtype != S::DTYPE {
        return Err(AutogradError::Checkpoint(format!(
            "checkpoint holds {} values, requested {}",
            manifest.dtype,
            S::DTYPE
        )));
    }
    let bytes = fs::read(dir.join(format!("{stem}.bin")))?;
    let mut store = ParamStore::new();
    for entry in &manifest.tensors {
        let n: usize = entry.shape.iter().product();
        let (start, end) = (entry.offset * S::BYTES, (entry.offset + n) * S::BYTES);
        let chunk = bytes.get(start..end).ok_or_else(|| {
            AutogradError::Checkpoint(format!("tensor {} runs past end of data", entry.name))
        })?;
        let data = chunk.chunks_exact(S::BYTES).map(S::read_le).collect();
        store.add(entry.name.clone(), Tensor::from_vec(entry.shape.clone(), data)?);
    }
    Ok((store, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ParamStore::<f32>::new();
        store.add("w", Tensor::from_vec(vec![2, 2], vec![0.1, -2.5e-7, 3.0, f32::MIN_POSITIVE]).unwrap());
        store.add("b", Tensor::from_vec(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        save_checkpoint(dir.path(), "model", &store, "abc").unwrap();
        let (loaded, manifest) = load_checkpoint::<f32>(dir.path(), "model").unwrap();
        assert_eq!(loaded, store);
        assert_eq!(manifest.config_hash, "abc");
        assert!(load_checkpoint::<f64>(dir.path(), "model").is_err());
    }
}
