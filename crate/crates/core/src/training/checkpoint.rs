use std::collections::HashMap;
use std::path::Path;

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{Error, Result};

const META_KEY: &str = "vadkit";

/// Run metadata stored in the checkpoint header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: u32,
    pub iteration: u64,
    pub seed: u64,
    pub config_hash: String,
    /// Resolved configuration, flat TOML.
    pub config: String,
}

pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub config: TrainConfig,
    pub tensors: HashMap<String, Tensor>,
}

/// Write tensors and metadata atomically (temp file then rename).
pub fn write_checkpoint(path: &Path, meta: &CheckpointMeta, tensors: Vec<(String, Tensor)>) -> Result<()> {
    let meta_json = serde_json::to_string(meta)?;
    let info = HashMap::from([(META_KEY.to_string(), meta_json)]);
    let bytes = safetensors::serialize(tensors, Some(info))
        .map_err(|e| Error::Checkpoint(format!("serializing {}: {e}", path.display())))?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading checkpoint {}", path.display()), e))?;
    let (_, header) = safetensors::SafeTensors::read_metadata(&bytes)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let meta_json = header
        .metadata()
        .as_ref()
        .and_then(|m| m.get(META_KEY))
        .ok_or_else(|| Error::Checkpoint(format!("{} has no run metadata", path.display())))?;
    let meta: CheckpointMeta = serde_json::from_str(meta_json)?;
    let config = TrainConfig::from_toml_str(&meta.config)
        .map_err(|errs| Error::Checkpoint(format!("embedded config invalid: {}", errs.join("; "))))?;
    if config.hash() != meta.config_hash {
        return Err(Error::Checkpoint("embedded config does not match its hash".into()));
    }
    let tensors = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu)?;
    Ok(Checkpoint { meta, config, tensors })
}
