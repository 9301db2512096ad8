//! TOML configuration holding every tunable default.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::BaselineConfig;
use crate::gat::GatConfig;
use crate::planner::{PlanConfig, PlanError, Planner};
use crate::potential::PotentialParams;
use crate::scenario::TrafficConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("serialize: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub plan: PlanConfig,
    pub network: GatConfig,
    pub potential: PotentialParams,
    pub traffic: TrafficConfig,
    pub baseline: BaselineConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.network.n_virtual != self.plan.n_virtual {
            return Err(ConfigError::Invalid(format!(
                "network.n_virtual = {} but plan.n_virtual = {}",
                self.network.n_virtual, self.plan.n_virtual
            )));
        }
        self.planner()?;
        if self.baseline.durations.is_empty() || !(self.baseline.speed_step > 0.0) {
            return Err(ConfigError::Invalid("baseline needs durations and a positive speed step".into()));
        }
        self.traffic
            .regs
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn planner(&self) -> Result<Planner, PlanError> {
        Planner::new(self.plan, self.network.clone(), self.potential)
    }
}
