//! Discrete-time point-mass swarm dynamics.
//!
//! Accelerations are held constant over each sampling interval, so one step
//! advances position by `u·Ts²/2 + v·Ts` and velocity by `u·Ts`.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::comm_graph::{CommModel, DEFAULT_DISK_RADIUS};
use crate::error::{shape_err, Error, Result};
use crate::vec2::Vec2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub position: Vec2,
    pub velocity: Vec2,
    pub acceleration: Vec2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwarmState {
    pub time_index: usize,
    pub agents: Vec<AgentState>,
}

impl SwarmState {
    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec2> {
        self.agents.iter().map(|a| a.position).collect()
    }

    pub fn velocities(&self) -> Vec<Vec2> {
        self.agents.iter().map(|a| a.velocity).collect()
    }

    pub fn mean_velocity(&self) -> Vec2 {
        let n = self.agents.len() as f64;
        let sum = self
            .agents
            .iter()
            .fold(Vec2::ZERO, |acc, a| acc + a.velocity);
        sum * (1.0 / n)
    }

    pub fn is_finite(&self) -> bool {
        self.agents.iter().all(|a| {
            a.position.is_finite() && a.velocity.is_finite() && a.acceleration.is_finite()
        })
    }

    /// Relabels agents: agent `k` of the result is agent `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> SwarmState {
        SwarmState {
            time_index: self.time_index,
            agents: perm.iter().map(|&p| self.agents[p]).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub n_agents: usize,
    /// Sampling interval in seconds.
    pub sample_time: f64,
    pub horizon: usize,
    /// Per-component acceleration bound (m/s²).
    pub u_max: f64,
    /// Maximum per-component initial speed (m/s).
    pub v_init: f64,
    /// Minimum pairwise distance accepted at initialization (m).
    pub min_spacing: f64,
    pub max_init_attempts: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_agents: 50,
            sample_time: 0.01,
            horizon: 100,
            u_max: 30.0,
            v_init: 3.0,
            min_spacing: 0.2,
            max_init_attempts: 1000,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents < 2 {
            return Err(Error::Config("sim.n_agents must be at least 2".into()));
        }
        if !(self.sample_time > 0.0 && self.sample_time.is_finite()) {
            return Err(Error::Config("sim.sample_time must be positive".into()));
        }
        if self.horizon < 1 {
            return Err(Error::Config("sim.horizon must be at least 1".into()));
        }
        if !(self.u_max > 0.0) {
            return Err(Error::Config("sim.u_max must be positive".into()));
        }
        if !(self.v_init >= 0.0 && self.v_init.is_finite()) {
            return Err(Error::Config("sim.v_init must be nonnegative".into()));
        }
        if !(self.min_spacing > 0.0) {
            return Err(Error::Config("sim.min_spacing must be positive".into()));
        }
        if self.max_init_attempts == 0 {
            return Err(Error::Config("sim.max_init_attempts must be positive".into()));
        }
        Ok(())
    }
}

/// Clamps each component to `[-u_max, u_max]`.
pub fn saturate(u: Vec2, u_max: f64) -> Vec2 {
    Vec2::new(u.x.clamp(-u_max, u_max), u.y.clamp(-u_max, u_max))
}

pub fn saturate_matrix(u: &mut Array2<f64>, u_max: f64) {
    u.mapv_inplace(|x| x.clamp(-u_max, u_max));
}

/// Advances the swarm by one sampling interval under `accelerations` (N×2).
pub fn step(
    state: &SwarmState,
    accelerations: ArrayView2<'_, f64>,
    config: &SimConfig,
) -> Result<SwarmState> {
    let n = state.len();
    if accelerations.dim() != (n, 2) {
        return Err(shape_err(format!(
            "accelerations are {:?}, expected ({n}, 2)",
            accelerations.dim()
        )));
    }
    if !state.is_finite() {
        return Err(Error::NonFinite("swarm state"));
    }
    if accelerations.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("accelerations"));
    }
    let ts = config.sample_time;
    let agents = state
        .agents
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let u = Vec2::new(accelerations[[i, 0]], accelerations[[i, 1]]);
            AgentState {
                position: u * (ts * ts / 2.0) + a.velocity * ts + a.position,
                velocity: u * ts + a.velocity,
                acceleration: u,
            }
        })
        .collect();
    Ok(SwarmState {
        time_index: state.time_index + 1,
        agents,
    })
}

fn sample_in_disc(rng: &mut ChaCha8Rng, radius: f64) -> Vec2 {
    let r = radius * rng.random::<f64>().sqrt();
    let theta = rng.random::<f64>() * std::f64::consts::TAU;
    Vec2::new(r * theta.cos(), r * theta.sin())
}

/// Agents that violate either acceptance predicate: fewer than two disk
/// neighbors within `radius`, or a partner no farther than `min_spacing`.
fn offending_agents(positions: &[Vec2], radius: f64, min_spacing: f64) -> Vec<usize> {
    let n = positions.len();
    let mut degree = vec![0usize; n];
    let mut crowded = vec![false; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (positions[i] - positions[j]).norm();
            if d <= radius {
                degree[i] += 1;
                degree[j] += 1;
            }
            if d <= min_spacing {
                crowded[i] = true;
                crowded[j] = true;
            }
        }
    }
    (0..n).filter(|&i| degree[i] < 2 || crowded[i]).collect()
}

/// Random initial swarm: positions uniform in a disc of radius √N, velocities
/// uniform per component in `[-v_init, v_init]` plus a flock-wide bias in
/// `[-0.3·v_init, 0.3·v_init]`.
///
/// Offending agents are redrawn until every agent has at least two neighbors
/// under the disk model and no pair is closer than `min_spacing`. The disk
/// predicate uses the model's radius, or the default radius for KNN models.
pub fn initialize_swarm(config: &SimConfig, comm: &CommModel, seed: u64) -> Result<SwarmState> {
    config.validate()?;
    let n = config.n_agents;
    let radius = comm.disk_radius().unwrap_or(DEFAULT_DISK_RADIUS);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let disc = (n as f64).sqrt();

    let mut positions: Vec<Vec2> = (0..n).map(|_| sample_in_disc(&mut rng, disc)).collect();
    let mut attempts = 1;
    loop {
        let bad = offending_agents(&positions, radius, config.min_spacing);
        if bad.is_empty() {
            break;
        }
        if attempts >= config.max_init_attempts {
            return Err(Error::InitFailed { attempts });
        }
        for i in bad {
            positions[i] = sample_in_disc(&mut rng, disc);
        }
        attempts += 1;
    }

    let v = config.v_init;
    let bias = Vec2::new(
        rng.random_range(-0.3 * v..=0.3 * v),
        rng.random_range(-0.3 * v..=0.3 * v),
    );
    let agents = positions
        .into_iter()
        .map(|position| {
            let velocity = Vec2::new(rng.random_range(-v..=v), rng.random_range(-v..=v)) + bias;
            AgentState {
                position,
                velocity,
                acceleration: Vec2::ZERO,
            }
        })
        .collect();
    Ok(SwarmState {
        time_index: 0,
        agents,
    })
}
