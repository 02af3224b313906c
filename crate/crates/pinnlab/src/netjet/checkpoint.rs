//! Checkpoint persistence: a JSON header next to a sidecar binary of
//! little-endian 64-bit reals in parameter-layout order. The header path
//! is `<stem>.json`, the sidecar `<stem>.bin`.

use super::{NetworkSpec, ParamVector};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub spec: NetworkSpec,
    /// Batch seed under which `loss` was recorded.
    pub seed: u64,
    pub step: u64,
    pub loss: f64,
}

fn sidecar_path(json_path: &Path) -> PathBuf {
    json_path.with_extension("bin")
}

pub fn save_checkpoint(
    json_path: &Path,
    header: &CheckpointHeader,
    params: &ParamVector,
) -> Result<()> {
    params.check(&header.spec)?;
    if let Some(dir) = json_path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut bytes = Vec::with_capacity(params.len() * 8);
    for v in params.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(sidecar_path(json_path), bytes)?;
    fs::write(json_path, serde_json::to_string_pretty(header)?)?;
    Ok(())
}

pub fn load_checkpoint(json_path: &Path) -> Result<(CheckpointHeader, ParamVector)> {
    let header: CheckpointHeader = serde_json::from_str(&fs::read_to_string(json_path)?)?;
    header.spec.validate()?;
    let bytes = fs::read(sidecar_path(json_path))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Checkpoint(format!(
            "sidecar length {} is not a multiple of 8",
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if values.len() != header.spec.n_params() {
        return Err(Error::Checkpoint(format!(
            "sidecar has {} values, spec requires {}",
            values.len(),
            header.spec.n_params()
        )));
    }
    let params = ParamVector::from_values(&header.spec, values)?;
    Ok((header, params))
}
