//! Experiment configuration in TOML.
//!
//! ```toml
//! [sim]
//! n_agents = 20
//!
//! [comm]
//! kind = "knn"
//! k = 10
//!
//! [controller]
//! kind = "grnn"
//! taps = 3
//! ```
//!
//! Every section is optional and every omitted key takes its default.
//! Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::comm_graph::CommModel;
use crate::controllers::ControllerConfig;
use crate::dynamics::SimConfig;
use crate::error::{Error, Result};
use crate::expert::ExpertConfig;
use crate::perception::{Degradation, PerceptionMode};
use crate::training::{Scenario, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Initialization seeds; each cell reports the median over these.
    pub seeds: Vec<u64>,
    pub degradation: Option<Degradation>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            seeds: (1000..1005).collect(),
            degradation: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub sim: SimConfig,
    pub comm: CommModel,
    pub expert: ExpertConfig,
    pub controller: ControllerConfig,
    pub perception: PerceptionMode,
    pub training: TrainConfig,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = super::read_text(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario().validate()?;
        self.controller.validate()?;
        self.perception.validate()?;
        self.training.validate()?;
        if self.eval.seeds.is_empty() {
            return Err(Error::Config("eval.seeds must not be empty".into()));
        }
        match self.eval.degradation {
            Some(Degradation::Gaussian { sigma }) if !(sigma >= 0.0 && sigma.is_finite()) => {
                Err(Error::Config("eval.degradation.sigma must be nonnegative".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn scenario(&self) -> Scenario {
        Scenario {
            sim: self.sim.clone(),
            comm: self.comm,
            expert: self.expert.clone(),
        }
    }

    /// First 16 hex digits of the SHA-256 of the config's JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        hex::encode(&digest[..8])
    }
}
