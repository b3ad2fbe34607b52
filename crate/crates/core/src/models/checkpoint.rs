use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "odesynth-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Self-describing model snapshot: model kind, its configuration and every
/// named parameter tensor. Stored as JSON; floats round-trip exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub config: serde_json::Value,
    /// Parameter stores keyed by role, e.g. `generator`, `discriminator`.
    pub stores: Vec<(String, ParamStore)>,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, config: &impl Serialize) -> Result<Self> {
        Ok(Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            kind: kind.into(),
            config: serde_json::to_value(config)
                .map_err(|e| Error::Checkpoint(format!("config: {e}")))?,
            stores: Vec::new(),
        })
    }

    pub fn with_store(mut self, role: impl Into<String>, store: &ParamStore) -> Self {
        self.stores.push((role.into(), store.clone()));
        self
    }

    pub fn store(&self, role: &str) -> Result<&ParamStore> {
        self.stores
            .iter()
            .find(|(r, _)| r == role)
            .map(|(_, s)| s)
            .ok_or_else(|| Error::Checkpoint(format!("no `{role}` parameters")))
    }

    /// Loads the `role` tensors into `target`, checking names and shapes.
    pub fn restore(&self, role: &str, target: &mut ParamStore) -> Result<()> {
        target.load_from(self.store(role)?)
    }

    pub fn config<C: DeserializeOwned>(&self) -> Result<C> {
        serde_json::from_value(self.config.clone())
            .map_err(|e| Error::Checkpoint(format!("config for {}: {e}", self.kind)))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("corrupt: {e}")))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format `{}`", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "version {} is not supported (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
