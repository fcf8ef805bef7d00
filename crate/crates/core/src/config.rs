//! Training configuration and its fingerprint.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::link::LossConfig;
use crate::model::ModelConfig;
use crate::optim::OptimizerKind;
use crate::paths::PathConfig;

/// Everything that determines a training run, apart from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub max_epochs: usize,
    /// Non-improving validation checks tolerated before stopping.
    pub patience: usize,
    /// Steps per epoch; `ceil(train edges / batch size)` when unset.
    pub steps_per_epoch: Option<usize>,
    /// Draw fresh context paths at the start of every epoch.
    pub resample_paths: bool,
    pub model: ModelConfig,
    pub paths: PathConfig,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            batch_size: 256,
            learning_rate: 0.005,
            optimizer: OptimizerKind::Adam,
            max_epochs: 100,
            patience: 5,
            steps_per_epoch: None,
            resample_paths: false,
            model: ModelConfig::default(),
            paths: PathConfig::default(),
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(Error::Config("steps_per_epoch must be at least 1".into()));
        }
        self.model.validate()?;
        self.paths.validate()?;
        self.loss.validate()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = TrainConfig::default();
        let back = TrainConfig::from_toml_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.fingerprint(), cfg.fingerprint());
        assert_eq!(cfg.fingerprint().len(), 64);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = TrainConfig::from_toml_str("seed = 4\n[model]\nhidden_dim = 16\n").unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.model.hidden_dim, 16);
        assert_eq!(cfg.model.semantic_dim, 10);
        assert_eq!(cfg.paths.num_paths, 50);
        assert_ne!(cfg.fingerprint(), TrainConfig::default().fingerprint());
    }

    #[test]
    fn unknown_and_invalid_keys_are_rejected() {
        assert!(TrainConfig::from_toml_str("sed = 4\n").is_err());
        assert!(TrainConfig::from_toml_str("[loss]\nmargin = -1.0\n").is_err());
        assert!(TrainConfig::from_toml_str("batch_size = 0\n").is_err());
    }
}
