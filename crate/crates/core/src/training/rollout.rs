//! Closed-loop simulation of a swarm under any controller.

use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::comm_graph::{build_gso, CommModel, GraphSnapshot};
use crate::controllers::Controller;
use crate::dynamics::{initialize_swarm, saturate_matrix, step, SimConfig, SwarmState};
use crate::error::{Error, Result};
use crate::expert::{centralized_control, ExpertConfig};
use crate::parallel::derive_seed;
use crate::perception::{sense, Degradation, PerceptionMode, Sensed};

/// Everything that defines the world a controller acts in.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub sim: SimConfig,
    pub comm: CommModel,
    pub expert: ExpertConfig,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.comm.validate(self.sim.n_agents)?;
        self.expert.validate()
    }

    pub fn with_agents(&self, n: usize) -> Scenario {
        let mut s = self.clone();
        s.sim.n_agents = n;
        s
    }
}

/// How expert and learner actions are combined during data collection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixingMode {
    /// Per step, execute the expert's action with probability β.
    #[default]
    Sample,
    /// Execute `β·u* + (1−β)·û`.
    Blend,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mixing {
    pub beta: f64,
    pub mode: MixingMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSource {
    Controller,
    Expert,
    Learner,
    Blend,
}

#[derive(Clone, Debug)]
pub struct StepRecord {
    pub state: SwarmState,
    pub snapshot: Arc<GraphSnapshot>,
    /// Raw sensing, kept when requested for training.
    pub sensed: Option<Sensed>,
    /// Saturated expert action `U*(t)`.
    pub expert: Array2<f64>,
    pub executed: Array2<f64>,
    pub source: ActionSource,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub seed: u64,
    /// Data-collection phase the trajectory belongs to.
    pub phase: usize,
    pub controller: String,
    pub records: Vec<StepRecord>,
    pub final_state: SwarmState,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_agents(&self) -> usize {
        self.final_state.len()
    }
}

#[derive(Clone, Debug, Default)]
pub struct RolloutOptions {
    /// Store sensing of this kind in every record.
    pub record: Option<PerceptionMode>,
    /// Sensor corruption applied to panoramas before the controller sees them.
    pub degradation: Option<Degradation>,
    /// Mix expert actions into a learned controller's execution.
    pub mixing: Option<Mixing>,
}

const COIN_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

/// Runs `controller` for the full horizon from the initialization given by
/// `seed`. The same seed always produces the same initial swarm, whatever the
/// controller.
pub fn rollout(controller: &Controller, scenario: &Scenario, seed: u64, options: &RolloutOptions) -> Result<Trajectory> {
    scenario.validate()?;
    let sim = &scenario.sim;
    let n = sim.n_agents;
    let mut state = initialize_swarm(sim, &scenario.comm, seed)?;
    let mut policy = controller.start(n)?;
    let mut coin = ChaCha8Rng::seed_from_u64(derive_seed(seed, COIN_STREAM));
    let mut noise = ChaCha8Rng::seed_from_u64(derive_seed(seed, NOISE_STREAM));
    let own_mode = controller.perception().cloned();
    let mut records = Vec::with_capacity(sim.horizon);

    for t in 0..sim.horizon {
        let snapshot = Arc::new(build_gso(&state.positions(), &scenario.comm, t)?);
        let sensed = match &own_mode {
            Some(mode) => Some(sense(mode, &state, &snapshot, options.degradation.map(|d| (d, &mut noise)))?),
            None => None,
        };
        let mut expert = centralized_control(&state, &scenario.expert)?;
        saturate_matrix(&mut expert, sim.u_max);
        let own = policy.act(&state, &snapshot, sensed.as_ref(), sim.u_max)?;
        let (executed, source) = match (&options.mixing, controller) {
            (Some(mix), Controller::Learned(_)) => match mix.mode {
                MixingMode::Sample => {
                    if coin.random_bool(mix.beta.clamp(0.0, 1.0)) {
                        (expert.clone(), ActionSource::Expert)
                    } else {
                        (own, ActionSource::Learner)
                    }
                }
                MixingMode::Blend => (&expert * mix.beta + &own * (1.0 - mix.beta), ActionSource::Blend),
            },
            _ => (own, ActionSource::Controller),
        };
        let recorded = match (&options.record, &own_mode, sensed) {
            (Some(want), Some(have), Some(s)) if want == have => Some(s),
            (Some(want), _, _) => Some(sense(want, &state, &snapshot, None)?),
            (None, _, _) => None,
        };
        let next = step(&state, executed.view(), sim)?;
        if !next.is_finite() {
            return Err(Error::NonFinite("swarm state"));
        }
        records.push(StepRecord {
            state: std::mem::replace(&mut state, next),
            snapshot,
            sensed: recorded,
            expert,
            executed,
            source,
        });
    }
    Ok(Trajectory {
        seed,
        phase: 0,
        controller: controller.name(),
        records,
        final_state: state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controllers::{ControllerConfig, Network};

    fn small() -> Scenario {
        Scenario {
            sim: SimConfig {
                n_agents: 8,
                horizon: 30,
                ..SimConfig::default()
            },
            ..Scenario::default()
        }
    }

    fn learner() -> Controller {
        Controller::Learned(Arc::new(
            Network::init(ControllerConfig::default(), PerceptionMode::Exact, 0).unwrap(),
        ))
    }

    #[test]
    fn expert_rollout_executes_expert_actions() {
        let tr = rollout(&Controller::Expert(ExpertConfig::default()), &small(), 3, &RolloutOptions::default()).unwrap();
        assert_eq!(tr.len(), 30);
        for (t, r) in tr.records.iter().enumerate() {
            assert_eq!(r.state.time_index, t);
            assert_eq!(r.executed, r.expert);
        }
    }

    #[test]
    fn same_seed_same_initial_state_for_every_controller() {
        let s = small();
        let a = rollout(&Controller::Expert(ExpertConfig::default()), &s, 9, &RolloutOptions::default()).unwrap();
        let b = rollout(&Controller::PositionBased(ExpertConfig::default()), &s, 9, &RolloutOptions::default()).unwrap();
        assert_eq!(a.records[0].state, b.records[0].state);
    }

    fn mixed(beta: f64) -> Trajectory {
        let opts = RolloutOptions {
            mixing: Some(Mixing {
                beta,
                mode: MixingMode::Sample,
            }),
            ..RolloutOptions::default()
        };
        rollout(&learner(), &small(), 4, &opts).unwrap()
    }

    #[test]
    fn beta_one_executes_expert() {
        for r in &mixed(1.0).records {
            assert_eq!(r.source, ActionSource::Expert);
            assert_eq!(r.executed, r.expert);
        }
    }

    #[test]
    fn beta_zero_executes_learner() {
        let tr = mixed(0.0);
        let plain = rollout(&learner(), &small(), 4, &RolloutOptions::default()).unwrap();
        for (r, p) in tr.records.iter().zip(&plain.records) {
            assert_eq!(r.source, ActionSource::Learner);
            assert_eq!(r.executed, p.executed);
        }
    }

    #[test]
    fn blend_is_convex_combination() {
        let opts = RolloutOptions {
            mixing: Some(Mixing {
                beta: 0.25,
                mode: MixingMode::Blend,
            }),
            ..RolloutOptions::default()
        };
        let tr = rollout(&learner(), &small(), 4, &opts).unwrap();
        let plain = rollout(&learner(), &small(), 4, &RolloutOptions::default()).unwrap();
        let first = &tr.records[0];
        let expected = &first.expert * 0.25 + &plain.records[0].executed * 0.75;
        assert_eq!(first.executed, expected);
    }

    #[test]
    fn records_requested_sensing() {
        let opts = RolloutOptions {
            record: Some(PerceptionMode::Exact),
            ..RolloutOptions::default()
        };
        let tr = rollout(&Controller::Expert(ExpertConfig::default()), &small(), 1, &opts).unwrap();
        assert!(tr.records.iter().all(|r| matches!(r.sensed, Some(Sensed::Features(_)))));
    }
}
