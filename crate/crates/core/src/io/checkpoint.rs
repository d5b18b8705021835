//! Versioned JSON checkpoints of trained networks.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::controllers::{ControllerConfig, Network};
use crate::error::{Error, Result};
use crate::params::{Param, ParamSet};
use crate::perception::PerceptionMode;
use crate::training::EpochLog;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredParam {
    pub name: String,
    pub shape: [usize; 2],
    /// Row-major.
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: String,
    pub controller: ControllerConfig,
    pub perception: PerceptionMode,
    /// Number of training epochs that produced the parameters.
    pub epochs: usize,
    pub final_loss: Option<f64>,
    pub params: Vec<StoredParam>,
}

impl Checkpoint {
    pub fn new(net: &Network, config_hash: &str, log: &[EpochLog]) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config_hash: config_hash.to_string(),
            controller: net.controller.clone(),
            perception: net.perception.clone(),
            epochs: log.len(),
            final_loss: log.last().map(|e| e.loss),
            params: net
                .params
                .params
                .iter()
                .map(|p| StoredParam {
                    name: p.name.clone(),
                    shape: [p.value.nrows(), p.value.ncols()],
                    values: p.value.iter().copied().collect(),
                })
                .collect(),
        }
    }

    pub fn network(&self) -> Result<Network> {
        let params = self
            .params
            .iter()
            .map(|p| {
                let value = Array2::from_shape_vec((p.shape[0], p.shape[1]), p.values.clone()).map_err(|_| {
                    Error::Format {
                        kind: "checkpoint",
                        message: format!(
                            "{} declares shape {:?} but holds {} values",
                            p.name,
                            p.shape,
                            p.values.len()
                        ),
                    }
                })?;
                Ok(Param::new(p.name.clone(), value))
            })
            .collect::<Result<Vec<_>>>()?;
        Network::from_params(self.controller.clone(), self.perception.clone(), ParamSet::new(params))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Probe {
            version: u32,
        }
        let probe: Probe = serde_json::from_str(text).map_err(|e| Error::Format {
            kind: "checkpoint",
            message: e.to_string(),
        })?;
        if probe.version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                kind: "checkpoint",
                found: probe.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        serde_json::from_str(text).map_err(|e| Error::Format {
            kind: "checkpoint",
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        super::write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&super::read_text(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controllers::ControllerKind;
    use crate::perception::{EncoderConfig, ViewConfig};

    fn nets() -> Vec<Network> {
        let small = EncoderConfig {
            bins: 16,
            channels: [2, 2],
            kernel: 3,
            pool: 4,
            features: 3,
        };
        let pano = PerceptionMode::Panorama {
            view: ViewConfig {
                bins: 16,
                ..ViewConfig::default()
            },
            encoder: small,
        };
        let grnn = ControllerConfig {
            kind: ControllerKind::Grnn,
            ..ControllerConfig::default()
        };
        vec![
            Network::init(ControllerConfig::default(), PerceptionMode::Exact, 1).unwrap(),
            Network::init(grnn, pano, 2).unwrap(),
        ]
    }

    #[test]
    fn round_trip_is_exact() {
        for net in nets() {
            let ck = Checkpoint::new(&net, "0123456789abcdef", &[]);
            let back = Checkpoint::from_json(&ck.to_json()).unwrap();
            assert_eq!(back, ck);
            assert_eq!(back.network().unwrap(), net);
        }
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("net.json");
        let net = &nets()[0];
        Checkpoint::new(net, "h", &[]).save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap().network().unwrap(), *net);
    }

    #[test]
    fn wrong_version_is_rejected() {
        let mut ck = Checkpoint::new(&nets()[0], "h", &[]);
        ck.version = 7;
        match Checkpoint::from_json(&ck.to_json()) {
            Err(Error::Version { found: 7, expected: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut ck = Checkpoint::new(&nets()[0], "h", &[]);
        ck.params[0].shape[0] += 1;
        assert!(ck.network().is_err());
        let mut ck = Checkpoint::new(&nets()[0], "h", &[]);
        ck.params.pop();
        assert!(ck.network().is_err());
    }
}
