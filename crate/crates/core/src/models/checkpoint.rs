use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ModelPair;
use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::numerics::Scalar;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// Monitored validation accuracy at `best_epoch`.
    pub best_metric: f64,
}

/// Everything needed to restore a trained pair. Floats are written with
/// shortest round-trip formatting, so reloading is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Checkpoint<T> {
    pub spec: Option<SyntheticSpec>,
    pub config: TrainConfig,
    pub models: ModelPair<T>,
    pub meta: CheckpointMeta,
    pub seed: u64,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::json("<checkpoint>", e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}
