use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::{AdamState, PolicyParams, PolicyShape, SquashSpec};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "mfswarm-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Position in the training seed schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub base_seed: u64,
    pub iteration: u64,
}

/// Self-describing JSON container; floats round-trip exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<M> {
    pub format: String,
    pub version: u32,
    pub shape: PolicyShape,
    pub squash: SquashSpec,
    pub params: PolicyParams,
    pub optimizer: AdamState,
    pub rng: RngState,
    pub meta: M,
}

impl<M: Serialize + DeserializeOwned> Checkpoint<M> {
    pub fn new(
        shape: PolicyShape,
        squash: SquashSpec,
        params: PolicyParams,
        optimizer: AdamState,
        rng: RngState,
        meta: M,
    ) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            shape,
            squash,
            params,
            optimizer,
            rng,
            meta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointMismatch(format!(
                "unsupported container {} v{}",
                self.format, self.version
            )));
        }
        self.params
            .check_shape(&self.shape)
            .map_err(|e| Error::CheckpointMismatch(e.to_string()))?;
        if self.optimizer.m.len() != self.params.tensors().len() {
            return Err(Error::CheckpointMismatch("optimizer state does not match parameters".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(s)?;
        ck.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
