//! Training configuration: validated fields, JSON or flat key-value
//! files, with command-line overrides applied on top by the CLI.

use crate::model::ModelKind;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("rho must lie in the open interval (0, 1), got {0}")]
    RhoOutOfRange(f64),
    #[error("batch_size must be at least 1")]
    BadBatchSize,
    #[error("learning_rate must be positive, got {0}")]
    BadLearningRate(f64),
    #[error("grad_clip must be positive, got {0}")]
    BadGradClip(f64),
    #[error("max_epochs must be at least 1")]
    BadMaxEpochs,
    #[error("config line {line}: {reason}")]
    BadLine { line: usize, reason: String },
    #[error("config key {0:?} is not recognized")]
    UnknownKey(String),
    #[error("config: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: ModelKind,
    /// Probability that a main-phase step draws an augmenting batch.
    pub rho: f64,
    pub pretrain_batches: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub max_epochs: usize,
    /// Early-stopping patience on dev error rate, in epochs.
    pub patience: usize,
    pub seed: u64,
    /// Speech corpus specs, `lang=path` or a bare manifest path.
    pub languages: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: ModelKind::Mmda,
            rho: 0.5,
            pretrain_batches: 2000,
            batch_size: 1,
            learning_rate: 1e-3,
            grad_clip: 5.0,
            max_epochs: 20,
            patience: 3,
            seed: 0,
            languages: Vec::new(),
        }
    }
}

impl TrainConfig {
    /// Defaults with the augmenting ratio that worked for each wiring
    /// (0.5 for the attention-route, 0.1 for the cascade).
    pub fn for_mode(mode: ModelKind) -> TrainConfig {
        TrainConfig {
            mode,
            rho: match mode {
                ModelKind::Mmda => 0.5,
                ModelKind::Psda => 0.1,
            },
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(ConfigError::RhoOutOfRange(self.rho));
        }
        if self.batch_size < 1 {
            return Err(ConfigError::BadBatchSize);
        }
        if !(self.learning_rate > 0.0) {
            return Err(ConfigError::BadLearningRate(self.learning_rate));
        }
        if !(self.grad_clip > 0.0) {
            return Err(ConfigError::BadGradClip(self.grad_clip));
        }
        if self.max_epochs < 1 {
            return Err(ConfigError::BadMaxEpochs);
        }
        Ok(())
    }
}

/// Parses either JSON (leading `{`) or flat `key = value` lines with
/// `#` comments. Keys mirror the config fields; `languages` takes a
/// comma-separated list.
pub fn parse_config_str(text: &str) -> Result<TrainConfig, ConfigError> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('{') {
        return serde_json::from_str(text).map_err(|e| ConfigError::Json(e.to_string()));
    }
    let mut cfg = TrainConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or(ConfigError::BadLine {
                line: i + 1,
                reason: "expected key = value".into(),
            })?;
        let bad = |reason: &str| ConfigError::BadLine {
            line: i + 1,
            reason: reason.to_string(),
        };
        match key {
            "mode" => cfg.mode = value.parse().map_err(|e: String| bad(&e))?,
            "rho" => cfg.rho = value.parse().map_err(|_| bad("invalid float"))?,
            "pretrain_batches" => {
                cfg.pretrain_batches = value.parse().map_err(|_| bad("invalid integer"))?
            }
            "batch_size" => cfg.batch_size = value.parse().map_err(|_| bad("invalid integer"))?,
            "learning_rate" => {
                cfg.learning_rate = value.parse().map_err(|_| bad("invalid float"))?
            }
            "grad_clip" => cfg.grad_clip = value.parse().map_err(|_| bad("invalid float"))?,
            "max_epochs" => cfg.max_epochs = value.parse().map_err(|_| bad("invalid integer"))?,
            "patience" => cfg.patience = value.parse().map_err(|_| bad("invalid integer"))?,
            "seed" => cfg.seed = value.parse().map_err(|_| bad("invalid integer"))?,
            "languages" => {
                cfg.languages = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect()
            }
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
    }
    Ok(cfg)
}
