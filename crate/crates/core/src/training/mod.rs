//! Deterministic optimization harness: Adam, the tri-modal training loop with
//! periodic frozen-encoder probes, and the bimodal dependence estimator.

pub mod adam;
pub mod estimator;
pub mod manifest;
pub mod mfmc;
pub mod probe;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{PairObjective, DEFAULT_RIDGE};

pub use adam::{adam_step, adam_step_mlp, AdamConfig, AdamState};
pub use estimator::{train_bimodal_estimator, EstimatorKind, EstimatorOutcome};
pub use manifest::{IterationRecord, RunManifest, RunStatus};
pub use mfmc::{train_mfmc, MfmcModel, TrainOutcome};
pub use probe::{linear_probe, ProbeConfig, ProbeResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    MfmcTrace,
    MfmcLogdet,
    HighOrderInfonce,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 3] =
        [ObjectiveKind::MfmcTrace, ObjectiveKind::MfmcLogdet, ObjectiveKind::HighOrderInfonce];

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::MfmcTrace => "mfmc-trace",
            ObjectiveKind::MfmcLogdet => "mfmc-logdet",
            ObjectiveKind::HighOrderInfonce => "high-order-infonce",
        }
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| Error::Config(format!("unknown objective `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub iterations: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub ridge: f64,
    pub seed: u64,
    pub objective: ObjectiveKind,
    pub temperature: f64,
    /// Batch norm after each hidden layer of every network.
    pub batch_norm: bool,
    /// Center embeddings before forming covariances (bimodal estimator only;
    /// the tri-modal objective always uses raw second moments).
    pub centered: bool,
    /// Probe refresh cadence in iterations.
    pub eval_interval: usize,
    /// Rows used for each probe fit.
    pub probe_samples: usize,
    pub probe: ProbeConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 200,
            adam: AdamConfig::default(),
            iterations: 2000,
            embed_dim: 8,
            hidden: 64,
            ridge: DEFAULT_RIDGE,
            seed: 0,
            objective: ObjectiveKind::MfmcTrace,
            temperature: 0.1,
            batch_norm: false,
            centered: false,
            eval_interval: 200,
            probe_samples: 2000,
            probe: ProbeConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch size must be >= 2, got {}", self.batch_size)));
        }
        if self.embed_dim == 0 || self.hidden == 0 {
            return Err(Error::Config("embedding and hidden widths must be >= 1".into()));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::Config(format!("ridge must be >= 0, got {}", self.ridge)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if self.eval_interval == 0 {
            return Err(Error::Config("eval interval must be >= 1".into()));
        }
        Ok(())
    }

    pub fn pair_objective(&self) -> PairObjective {
        match self.objective {
            ObjectiveKind::MfmcTrace => PairObjective::Trace { ridge: self.ridge },
            ObjectiveKind::MfmcLogdet => PairObjective::LogDet { ridge: self.ridge },
            ObjectiveKind::HighOrderInfonce => PairObjective::InfoNce { temperature: self.temperature },
        }
    }

    /// 1-based iterations at which the probe is refreshed.
    pub fn is_eval_iteration(&self, iteration: usize) -> bool {
        iteration % self.eval_interval == 0 || iteration == self.iterations
    }
}
