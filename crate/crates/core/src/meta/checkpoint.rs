//! TOML checkpoints: architecture, flat parameters, training configuration
//! and free-form metadata. Floats are written in shortest round-trip form,
//! so a save/load cycle is exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MetaError, TrainConfig};
use crate::params::{Arch, ParamVector};

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: u32,
    pub iteration: usize,
    pub seed: u64,
    pub arch: Arch,
    pub config: TrainConfig,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn new(params: &ParamVector, config: &TrainConfig, iteration: usize) -> Self {
        Self {
            format: CHECKPOINT_FORMAT,
            iteration,
            seed: config.seed,
            arch: params.arch().clone(),
            config: config.clone(),
            metadata: BTreeMap::new(),
            params: params.values().to_vec(),
        }
    }

    /// Rebuilds the parameter vector, checking the stored length against the
    /// architecture.
    pub fn param_vector(&self) -> Result<ParamVector, MetaError> {
        ParamVector::new(self.params.clone(), self.arch.clone())
            .map_err(|e| MetaError::Checkpoint(e.to_string()))
    }

    /// Fails unless the checkpoint was written for `arch`.
    pub fn expect_arch(&self, arch: &Arch) -> Result<(), MetaError> {
        if &self.arch != arch {
            return Err(MetaError::Checkpoint(format!(
                "architecture mismatch: checkpoint has {:?}, expected {:?}",
                self.arch, arch
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String, MetaError> {
        toml::to_string(self).map_err(|e| MetaError::Checkpoint(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self, MetaError> {
        let ck: Checkpoint = toml::from_str(text).map_err(|e| MetaError::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(MetaError::Checkpoint(format!("unsupported format {}", ck.format)));
        }
        ck.param_vector()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), MetaError> {
        fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, MetaError> {
        Self::from_toml(&fs::read_to_string(path)?)
    }
}
