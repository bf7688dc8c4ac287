//! Experiment configuration: one JSON document for every command.

use std::path::Path;

use flat_core::flow::VelocityNorm;
use flat_core::oracle::VerificationConfig;
use flat_core::phantom::DataConfig;
use flat_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::json;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    /// Squared error is multiplied by this before the 8-bit mapping of
    /// error-map images.
    pub error_map_scale: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { error_map_scale: 10.0 }
    }
}

/// One velocity-loss formulation in the norm/weight grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VelocitySetting {
    pub norm: VelocityNorm,
    pub w_velocity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationOptions {
    /// Training seeds; every grid point is trained once per seed.
    pub replicates: Vec<u64>,
    pub velocity_settings: Vec<VelocitySetting>,
}

impl Default for AblationOptions {
    fn default() -> Self {
        let settings = [(VelocityNorm::L1, 1e-4), (VelocityNorm::L1, 1e-3), (VelocityNorm::L2, 1e-4), (VelocityNorm::L2, 1e-3)];
        Self {
            replicates: vec![0],
            velocity_settings: settings.iter().map(|&(norm, w_velocity)| VelocitySetting { norm, w_velocity }).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub verify: VerificationConfig,
    pub eval: EvalOptions,
    pub ablation: AblationOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            data: DataConfig::default(),
            train: TrainConfig::default(),
            verify: VerificationConfig::default(),
            eval: EvalOptions::default(),
            ablation: AblationOptions::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file. Missing blocks and keys take
    /// their defaults; unknown keys are rejected.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        json::write(path, self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.data.validate()?;
        self.train.validate()?;
        if !(self.eval.error_map_scale > 0.0) || !self.eval.error_map_scale.is_finite() {
            return Err(Error::Config("error_map_scale must be positive".into()));
        }
        if self.ablation.replicates.is_empty() {
            return Err(Error::Config("ablation needs at least one replicate seed".into()));
        }
        for s in &self.ablation.velocity_settings {
            if !(s.w_velocity >= 0.0) || !s.w_velocity.is_finite() {
                return Err(Error::Config(format!("w_velocity must be >= 0, got {}", s.w_velocity)));
            }
        }
        Ok(())
    }

    /// Applies a `--seed` override to both the data root seed and the
    /// training seed.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.data.root_seed = s;
            self.train.seed = s;
            self.verify.seed = s;
        }
        self
    }
}
