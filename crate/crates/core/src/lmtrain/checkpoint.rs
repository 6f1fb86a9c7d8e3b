//! Flat little-endian f64 parameter file plus a JSON manifest of named tensors.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{ParamSpec, TinyConfig, TinyTransformer};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub config: TinyConfig,
    pub tensors: Vec<ParamSpec>,
    pub num_params: usize,
    pub sha256: String,
}

/// Writes `<stem>.bin` and `<stem>.json`.
pub fn save_checkpoint(model: &TinyTransformer, dir: &Path, stem: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bytes: Vec<u8> = model.params().iter().flat_map(|v| v.to_le_bytes()).collect();
    let manifest = CheckpointManifest {
        config: model.config,
        tensors: model.layout().to_vec(),
        num_params: model.num_params(),
        sha256: format!("{:x}", Sha256::digest(&bytes)),
    };
    let bin = dir.join(format!("{stem}.bin"));
    fs::write(&bin, &bytes).map_err(|e| Error::io(&bin, e))?;
    let json = dir.join(format!("{stem}.json"));
    fs::write(&json, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&json, e))?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path, stem: &str) -> Result<TinyTransformer> {
    let json = dir.join(format!("{stem}.json"));
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    let bin = dir.join(format!("{stem}.bin"));
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if format!("{:x}", Sha256::digest(&bytes)) != manifest.sha256 {
        return Err(Error::Config(format!(
            "{} does not match its manifest checksum",
            bin.display()
        )));
    }
    if bytes.len() != manifest.num_params * 8 {
        return Err(Error::Config(format!(
            "{} has {} bytes for {} parameters",
            bin.display(),
            bytes.len(),
            manifest.num_params
        )));
    }
    let params = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let model = TinyTransformer::from_params(manifest.config, params)?;
    if model.layout() != manifest.tensors.as_slice() {
        return Err(Error::Config("checkpoint tensor layout differs from this build".into()));
    }
    Ok(model)
}
