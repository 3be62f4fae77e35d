//! Weights and optimizer state in one versioned JSON file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Adam, Head, Mlp, NeuralPolicy, TrainConfig};
use crate::mpc::CondensedMpc;
use crate::phase1::PhaseOne;
use crate::{Error, Result};

const FORMAT: &str = "gaugempc-weights";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsFile {
    format: String,
    version: u32,
    pub config: TrainConfig,
    pub mlp: Mlp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<Adam>,
}

impl WeightsFile {
    pub fn new(config: TrainConfig, mlp: Mlp, optimizer: Option<Adam>) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            config,
            mlp,
            optimizer,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: Self = serde_json::from_str(text)?;
        if file.format != FORMAT || file.version != VERSION {
            return Err(Error::Parse(format!(
                "expected {FORMAT} version {VERSION}, found {} version {}",
                file.format, file.version
            )));
        }
        if !file.mlp.is_finite() {
            return Err(Error::Parse("weights contain non-finite values".into()));
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn into_policy(self, mpc: &CondensedMpc, phase1: Option<&PhaseOne>) -> Result<NeuralPolicy> {
        let head = Head::new(self.config.kind, mpc, phase1, self.config.squash)?;
        NeuralPolicy::new(self.mlp, head, mpc)
    }
}
