use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AaiConfig, AaiModel, AaiTrainer, PriorModel, TrainLog};
use crate::{Error, Result};

pub const CHECKPOINT_SCHEMA: &str = "aai-checkpoint/1";

/// Everything needed to run inference or resume training: all networks with
/// their normalization statistics, optimizer moments, RNG state, step counters
/// and the configuration that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema: String,
    pub config: AaiConfig,
    /// Snapshot of the outer run configuration, if any.
    pub run_config: Option<serde_json::Value>,
    pub prior: PriorModel,
    pub prior_log: TrainLog,
    pub trainer: AaiTrainer,
}

impl Checkpoint {
    pub fn new(prior: PriorModel, prior_log: TrainLog, trainer: AaiTrainer) -> Self {
        Self {
            schema: CHECKPOINT_SCHEMA.to_string(),
            config: trainer.config().clone(),
            run_config: None,
            prior,
            prior_log,
            trainer,
        }
    }

    pub fn model(&self) -> AaiModel {
        self.trainer.model()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            schema: Option<String>,
        }
        let header: Header =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("unreadable checkpoint: {e}")))?;
        match header.schema.as_deref() {
            Some(CHECKPOINT_SCHEMA) => {}
            other => {
                return Err(Error::Checkpoint(format!(
                    "incompatible checkpoint schema {:?} (expected {CHECKPOINT_SCHEMA:?})",
                    other.unwrap_or("<missing>")
                )))
            }
        }
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("corrupt checkpoint: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
