//! Model weights in the NDC1 container plus a JSON sidecar.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Model, ModelKind, ScaleProfile};
use crate::ndcore::serialize;

pub const MODULE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: ModelKind,
    pub profile: ScaleProfile,
    pub module_version: String,
    /// Initialisation seed.
    pub seed: u64,
    /// Epoch the weights were taken from (1-based; 0 = untrained).
    pub epoch: usize,
    pub validation_accuracy: Vec<f64>,
    pub validation_loss: Vec<f64>,
}

impl CheckpointMeta {
    pub fn for_model(model: &Model) -> Self {
        CheckpointMeta {
            kind: model.kind,
            profile: model.profile.clone(),
            module_version: MODULE_VERSION.to_string(),
            seed: model.seed,
            epoch: 0,
            validation_accuracy: Vec::new(),
            validation_loss: Vec::new(),
        }
    }
}

pub fn sidecar_path(weights: &Path) -> PathBuf {
    weights.with_extension("json")
}

/// Write parameters and buffers to `path` and metadata to `path.json`.
pub fn save_checkpoint(model: &Model, path: &Path, meta: &CheckpointMeta) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let entries = serialize::store_entries(&[&model.params, &model.buffers]);
    serialize::write_file(path, &entries)?;
    let json = serde_json::to_string_pretty(meta)?;
    let side = sidecar_path(path);
    std::fs::write(&side, json).map_err(|e| Error::io(&side, e))
}

/// Rebuild the model described by the sidecar and load every tensor.
pub fn load_checkpoint(path: &Path) -> Result<(Model, CheckpointMeta)> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)?;
    let mut model = Model::new(meta.kind, meta.profile.clone(), meta.seed)?;
    let entries = serialize::read_file(path)?;
    let expected = model.params.len() + model.buffers.len();
    if entries.len() != expected {
        return Err(Error::Data(format!(
            "checkpoint {path:?} has {} tensors, model expects {expected}",
            entries.len()
        )));
    }
    for (name, t) in &entries {
        if model.params.id(name).is_some() {
            model.params.assign(name, t)?;
        } else if model.buffers.id(name).is_some() {
            model.buffers.assign(name, t)?;
        } else {
            return Err(Error::Data(format!("checkpoint tensor {name} not part of the model")));
        }
    }
    Ok((model, meta))
}
