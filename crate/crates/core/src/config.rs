//! Experiment configuration: one JSON document with a section per stage.
//! Every field has a default, so `{}` is a valid config.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bellman::{BaseConfig, CalibrationConfig};
use crate::crm::CrmParams;
use crate::error::{Error, Result};
use crate::nuisance::NuisanceConfig;
use crate::regress::RegressorKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub n_cust: usize,
    pub horizon: usize,
    pub seeds: Vec<u64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_cust: 10_000,
            horizon: 24,
            seeds: (1..=10).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SplitBy {
    #[default]
    Customer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    /// Fraction of customers in the training fold. Zero means no split
    /// (fit and calibrate on the same data) and needs an explicit opt-in.
    pub train_fraction: f64,
    pub by: SplitBy,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.5,
            by: SplitBy::Customer,
        }
    }
}

/// Base-model grid for the experiment harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaseSection {
    /// Regressor families; one model per family and snapshot.
    pub models: Vec<RegressorKind>,
    #[serde(flatten)]
    pub fit: BaseConfig,
    /// When non-empty, one model per snapshot round (overrides `snapshot_at`).
    pub snapshots: Vec<usize>,
}

impl Default for BaseSection {
    fn default() -> Self {
        Self {
            models: vec![RegressorKind::LinearRidge],
            fit: BaseConfig::default(),
            snapshots: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub n_rollouts: usize,
    /// Rollout length. At or above the maximum tenure the CRM tail is zero.
    pub horizon_eff: usize,
    pub n_initial_states: usize,
    #[serde(rename = "B_eval", alias = "b_eval")]
    pub b_eval: Option<usize>,
    /// Customers in the fresh dataset used for calibration error.
    /// Defaults to `data.n_cust`.
    pub n_eval_cust: Option<usize>,
    pub truncation_tol: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_rollouts: 100,
            horizon_eff: 60,
            n_initial_states: 500,
            b_eval: None,
            n_eval_cust: None,
            truncation_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TargetChoice {
    /// The deterministic aggressive promotion policy.
    #[default]
    Aggressive,
    /// Evaluate the logging policy itself.
    Behavior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ExperimentConfig {
    pub crm: CrmParams,
    pub policy: TargetChoice,
    pub data: DataConfig,
    pub split: SplitConfig,
    pub base: BaseSection,
    pub calibration: CalibrationConfig,
    pub nuisance: NuisanceConfig,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: Self = crate::io::read_json(path)?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Checks every section. `allow_no_split` must be set for
    /// `train_fraction = 0`.
    pub fn validate(&self, allow_no_split: bool) -> Result<()> {
        self.crm.validate()?;
        self.calibration.validate()?;
        self.nuisance.validate()?;
        if self.data.seeds.is_empty() {
            return Err(Error::InvalidConfig("data.seeds must not be empty".into()));
        }
        if self.data.n_cust == 0 || self.data.horizon == 0 {
            return Err(Error::InvalidConfig("data.n_cust and data.horizon must be positive".into()));
        }
        let f = self.split.train_fraction;
        if !(0.0..1.0).contains(&f) {
            return Err(Error::InvalidConfig("split.train_fraction must lie in [0, 1)".into()));
        }
        if f == 0.0 && !allow_no_split {
            return Err(Error::InvalidConfig(
                "split.train_fraction = 0 fits and calibrates on the same data; pass --unsafe-no-split to allow it"
                    .into(),
            ));
        }
        if self.base.models.is_empty() {
            return Err(Error::InvalidConfig("base.models must not be empty".into()));
        }
        if self.eval.n_rollouts == 0 || self.eval.n_initial_states == 0 {
            return Err(Error::InvalidConfig("eval.n_rollouts and eval.n_initial_states must be positive".into()));
        }
        Ok(())
    }
}
