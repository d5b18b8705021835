//! Imitation learning: loss, truncated backpropagation through time, dataset
//! aggregation, and the Adam loop.

pub mod rollout;

use std::sync::Arc;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use rollout::{rollout, ActionSource, Mixing, MixingMode, RolloutOptions, Scenario, StepRecord, Trajectory};

use crate::autodiff::{Backend, Eager, Tape};
use crate::controllers::{Controller, ControllerConfig, NetState, Network};
use crate::error::{shape_err, Error, Result};
use crate::expert::ExpertConfig;
use crate::parallel::{self, derive_seed, ExecMode};
use crate::params::{Param, ParamSet};
use crate::perception::PerceptionMode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Passes over the dataset after each collection phase.
    pub epochs: usize,
    /// Windows per optimizer step.
    pub batch_size: usize,
    /// Steps per backpropagation window.
    pub window: usize,
    /// Probability of executing the expert's action during aggregation.
    pub beta: f64,
    pub mixing: MixingMode,
    pub initial_trajectories: usize,
    pub dagger_trajectories: usize,
    pub dagger_rounds: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            epochs: 30,
            batch_size: 16,
            window: 4,
            beta: 0.33,
            mixing: MixingMode::Sample,
            initial_trajectories: 15,
            dagger_trajectories: 5,
            dagger_rounds: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("training.learning_rate must be nonnegative".into()));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("training.{name} must lie in [0, 1)")));
            }
        }
        if !(self.adam_epsilon > 0.0) {
            return Err(Error::Config("training.adam_epsilon must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config("training.beta must lie in [0, 1]".into()));
        }
        if self.batch_size == 0 || self.window == 0 {
            return Err(Error::Config("training.batch_size and training.window must be positive".into()));
        }
        if self.initial_trajectories == 0 {
            return Err(Error::Config("training.initial_trajectories must be positive".into()));
        }
        Ok(())
    }
}

/// `(1/N)·Σ_i ‖û_i − u*_i‖₁`.
pub fn imitation_loss(predicted: &Array2<f64>, expert: &Array2<f64>) -> Result<f64> {
    if predicted.dim() != expert.dim() {
        return Err(shape_err(format!(
            "prediction is {:?}, expert is {:?}",
            predicted.dim(),
            expert.dim()
        )));
    }
    let n = predicted.nrows().max(1) as f64;
    Ok(predicted.iter().zip(expert).map(|(a, b)| (a - b).abs()).sum::<f64>() / n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcludedRollout {
    pub seed: u64,
    pub phase: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    pub excluded: Vec<ExcludedRollout>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn extend(&mut self, other: Dataset) {
        self.trajectories.extend(other.trajectories);
        self.excluded.extend(other.excluded);
    }

    pub fn phase_count(&self, phase: usize) -> usize {
        self.trajectories.iter().filter(|t| t.phase == phase).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollectSpec<'a> {
    pub expert: &'a ExpertConfig,
    /// Learner mixed in with probability `1−β`; `None` collects pure expert
    /// demonstrations.
    pub learner: Option<&'a Arc<Network>>,
    pub beta: f64,
    pub mixing: MixingMode,
    /// Sensing stored for training.
    pub perception: &'a PerceptionMode,
    pub phase: usize,
}

/// Runs `count` labelled rollouts. Rollouts that diverge are left out and
/// listed in [`Dataset::excluded`].
pub fn dagger_collect(
    spec: &CollectSpec<'_>,
    scenario: &Scenario,
    count: usize,
    seed: u64,
    exec: ExecMode,
) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&spec.beta) {
        return Err(Error::Config("beta must lie in [0, 1]".into()));
    }
    let controller = match spec.learner {
        Some(net) => Controller::Learned(net.clone()),
        None => Controller::Expert(spec.expert.clone()),
    };
    let options = RolloutOptions {
        record: Some(spec.perception.clone()),
        degradation: None,
        mixing: spec.learner.map(|_| Mixing {
            beta: spec.beta,
            mode: spec.mixing,
        }),
    };
    let mut scenario = scenario.clone();
    scenario.expert = spec.expert.clone();
    let seeds: Vec<u64> = (0..count as u64)
        .map(|i| derive_seed(seed, ((spec.phase as u64) << 32) | i))
        .collect();
    let results = parallel::map(exec, &seeds, |&s| rollout(&controller, &scenario, s, &options));
    let mut data = Dataset::default();
    for (s, r) in seeds.into_iter().zip(results) {
        match r {
            Ok(mut tr) => {
                tr.phase = spec.phase;
                data.trajectories.push(tr);
            }
            Err(e) => data.excluded.push(ExcludedRollout {
                seed: s,
                phase: spec.phase,
                reason: e.to_string(),
            }),
        }
    }
    Ok(data)
}

#[derive(Clone, Debug)]
pub struct WindowGradient {
    pub loss: f64,
    pub grads: ParamSet,
}

/// Controller states at the start of each full window, obtained by running
/// the current parameters over the recorded sensing.
pub fn window_carries(net: &Network, trajectory: &Trajectory, window: usize) -> Result<Vec<NetState<Array2<f64>>>> {
    let loaded = net.load(&mut Eager);
    let mut state = net.initial_state(&mut Eager, trajectory.n_agents());
    let windows = trajectory.len() / window;
    let mut carries = Vec::with_capacity(windows);
    for (t, record) in trajectory.records[..windows * window].iter().enumerate() {
        if t % window == 0 {
            carries.push(state.clone());
        }
        let sensed = record
            .sensed
            .as_ref()
            .ok_or_else(|| Error::Config("trajectory has no recorded sensing".into()))?;
        let x = loaded.features(&mut Eager, sensed);
        loaded.step(&mut Eager, &mut state, &record.snapshot, x);
    }
    Ok(carries)
}

/// Exact gradients of the mean per-step imitation loss over `window`
/// consecutive records, starting from the detached controller state `carry`.
/// Graph shift operators are treated as constants.
pub fn bptt_gradients(
    net: &Network,
    records: &[StepRecord],
    window: usize,
    carry: &NetState<Array2<f64>>,
) -> Result<WindowGradient> {
    if window == 0 || records.len() < window {
        return Err(Error::IncompleteWindow {
            needed: window.max(1),
            got: records.len(),
        });
    }
    let mut tape = Tape::new();
    let leaves: Vec<_> = net.params.params.iter().map(|p| tape.leaf(p.value.clone())).collect();
    let loaded = net.bind(leaves.clone());
    let mut state = carry.detach(&mut tape);
    let mut losses = Vec::with_capacity(window);
    for record in &records[..window] {
        let sensed = record
            .sensed
            .as_ref()
            .ok_or_else(|| Error::Config("trajectory has no recorded sensing".into()))?;
        let x = loaded.features(&mut tape, sensed);
        let u = loaded.step(&mut tape, &mut state, &record.snapshot, x);
        if tape.value(&u).dim() != record.expert.dim() {
            return Err(shape_err("controller output does not match expert labels"));
        }
        losses.push(tape.l1_loss(u, &record.expert));
    }
    let total = tape.sum(&losses);
    let mean = tape.scale(total, 1.0 / window as f64);
    let grads = tape.backward(mean);
    let grads = ParamSet::new(
        net.params
            .params
            .iter()
            .zip(&leaves)
            .map(|(p, &v)| Param::new(p.name.clone(), grads.get_or_zeros(v, p.value.dim())))
            .collect(),
    );
    Ok(WindowGradient {
        loss: tape.scalar(mean),
        grads,
    })
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    steps: i32,
    m: ParamSet,
    v: ParamSet,
}

impl Adam {
    pub fn new(config: &TrainConfig, params: &ParamSet) -> Self {
        Adam {
            learning_rate: config.learning_rate,
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            epsilon: config.adam_epsilon,
            steps: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) {
        self.steps += 1;
        let c1 = 1.0 - self.beta1.powi(self.steps);
        let c2 = 1.0 - self.beta2.powi(self.steps);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        for (((p, g), m), v) in params
            .params
            .iter_mut()
            .zip(&grads.params)
            .zip(&mut self.m.params)
            .zip(&mut self.v.params)
        {
            ndarray::Zip::from(&mut p.value)
                .and(&g.value)
                .and(&mut m.value)
                .and(&mut v.value)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub phase: usize,
    pub loss: f64,
    pub grad_norm: f64,
    /// Seconds since training started.
    pub wall_time: f64,
}

pub struct TrainOutcome {
    pub network: Network,
    pub log: Vec<EpochLog>,
    pub dataset: Dataset,
}

impl TrainOutcome {
    pub fn losses(&self) -> Vec<f64> {
        self.log.iter().map(|e| e.loss).collect()
    }
}

const OPTIMIZER_STREAM: u64 = u64::MAX;

/// Fits `net` to `data` for `epochs` passes.
pub fn fit(
    net: &mut Network,
    adam: &mut Adam,
    data: &Dataset,
    config: &TrainConfig,
    phase: usize,
    first_epoch: usize,
    exec: ExecMode,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let start = Instant::now();
    let k = config.window;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, OPTIMIZER_STREAM - phase as u64));
    let mut log = Vec::with_capacity(config.epochs);
    for e in 0..config.epochs {
        let epoch = first_epoch + e;
        let current: &Network = net;
        let carries = parallel::map(exec, &data.trajectories, |tr| window_carries(current, tr, k))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let mut windows: Vec<(usize, usize)> = carries
            .iter()
            .enumerate()
            .flat_map(|(ti, c)| (0..c.len()).map(move |wi| (ti, wi)))
            .collect();
        if windows.is_empty() {
            return Err(Error::IncompleteWindow {
                needed: k,
                got: data.trajectories.iter().map(Trajectory::len).max().unwrap_or(0),
            });
        }
        windows.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut norm_sum = 0.0;
        let mut batches = 0;
        for batch in windows.chunks(config.batch_size) {
            let current: &Network = net;
            let results = parallel::map(exec, batch, |&(ti, wi)| {
                bptt_gradients(current, &data.trajectories[ti].records[wi * k..], k, &carries[ti][wi])
            });
            let mut total = net.params.zeros_like();
            let mut batch_loss = 0.0;
            for (&(ti, wi), r) in batch.iter().zip(results) {
                let wg = r?;
                if !wg.loss.is_finite() || !wg.grads.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        trajectory: ti,
                        window: wi,
                        grad_norm: wg.grads.norm(),
                    });
                }
                batch_loss += wg.loss;
                total.add_assign(&wg.grads);
            }
            total.scale(1.0 / batch.len() as f64);
            loss_sum += batch_loss;
            norm_sum += total.norm();
            batches += 1;
            adam.step(&mut net.params, &total);
        }
        let entry = EpochLog {
            epoch,
            phase,
            loss: loss_sum / windows.len() as f64,
            grad_norm: norm_sum / batches as f64,
            wall_time: start.elapsed().as_secs_f64(),
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(log)
}

/// Full protocol: expert demonstrations, then `dagger_rounds` rounds of
/// mixed-policy collection, retraining on the growing union after each
/// phase. Each round starts from the previous round's parameters.
pub fn train(
    config: &TrainConfig,
    scenario: &Scenario,
    controller: ControllerConfig,
    perception: PerceptionMode,
    exec: ExecMode,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    scenario.validate()?;
    let mut net = Network::init(controller, perception.clone(), derive_seed(config.seed, 0))?;
    let mut adam = Adam::new(config, &net.params);
    let data_seed = derive_seed(config.seed, 1);
    let mut dataset = Dataset::default();
    let mut log = Vec::new();
    for phase in 0..=config.dagger_rounds {
        let learner = Arc::new(net.clone());
        let spec = CollectSpec {
            expert: &scenario.expert,
            learner: (phase > 0).then_some(&learner),
            beta: config.beta,
            mixing: config.mixing,
            perception: &perception,
            phase,
        };
        let count = if phase == 0 {
            config.initial_trajectories
        } else {
            config.dagger_trajectories
        };
        dataset.extend(dagger_collect(&spec, scenario, count, data_seed, exec)?);
        log.extend(fit(&mut net, &mut adam, &dataset, config, phase, log.len(), exec, on_epoch)?);
    }
    Ok(TrainOutcome {
        network: net,
        log,
        dataset,
    })
}
