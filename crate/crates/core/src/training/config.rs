use serde::{Deserialize, Serialize};

use super::LossMode;
use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Optimization settings. The candidate-set size lives in `model.k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub loss: LossMode,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            max_epochs: 1000,
            patience: 30,
            seed: 0,
            loss: LossMode::PerPoiDivK,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn k(&self) -> usize {
        self.model.k
    }

    pub fn validate(&self) -> Result<()> {
        if self.patience < 1 {
            return Err(Error::param("patience", "must be at least 1"));
        }
        if self.max_epochs < 1 {
            return Err(Error::param("max_epochs", "must be at least 1"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::param("lr", format!("{} is not a finite non-negative rate", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::param(name, format!("{b} not in [0, 1)")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::param("adam_eps", "must be positive"));
        }
        self.model.validate()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: TrainConfig = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }
}
