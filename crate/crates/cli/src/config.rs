//! Run configuration: robot/controller selection plus trainer
//! hyperparameters, loadable from TOML and overridable by flags.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::Path;

use planarwalk::ppo::PpoConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse config {path}: {source}")]
    Parse { path: String, source: toml::de::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// "rabbit", "rabbit_ideal", or "walker2d".
    pub robot: String,
    /// "fl" or "idqp".
    pub controller: String,
    /// "nominal" or "high".
    pub gains: String,
    /// Weights over (velocity, lateral, momentum, action-rate) reward terms.
    pub reward_weights: [f64; 4],
    /// During training, alternate workers between FL and ID-QP low-level
    /// controllers so the policy does not overfit one tracking loop.
    pub mixed_controllers: bool,
    /// Resample the commanded speed every 2 s during training episodes.
    pub curriculum_velocity: bool,
    /// Sample the terrain slope from [-5°, 10°] per training episode.
    pub curriculum_slope: bool,
    pub ppo: PpoConfig,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            robot: "rabbit".into(),
            controller: "fl".into(),
            gains: "nominal".into(),
            reward_weights: [0.6, 0.0, 0.2, 0.2],
            mixed_controllers: true,
            curriculum_velocity: true,
            curriculum_slope: true,
            ppo: PpoConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.display().to_string(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.ppo
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.reward_weights.iter().any(|w| *w < 0.0) {
            return Err(ConfigError::Invalid("negative reward weight".into()));
        }
        Ok(())
    }

    /// Stable hash of the serialized config, stamped into output files so a
    /// table can be traced back to the settings that produced it.
    pub fn hash(&self) -> u64 {
        let text = toml::to_string(self).expect("config serializes");
        let mut h = DefaultHasher::new();
        text.hash(&mut h);
        h.finish()
    }
}
