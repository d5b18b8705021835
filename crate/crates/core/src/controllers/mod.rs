//! Decentralized controllers and the policies used in rollouts.

pub mod dagnn;
pub mod delay;
pub mod grnn;

use std::sync::Arc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use dagnn::{dagnn_forward, dagnn_forward_batch, mlp, DagnnParams, DenseLayer};
pub use delay::{dagnn_aggregate, graph_filter, AggregationSequence, DelayLine, HistoryBuffer};
pub use grnn::{grnn_cell, grnn_output, grnn_readout, grnn_step, GrnnParams, HiddenState};

use crate::autodiff::{Activation, Backend, Eager};
use crate::comm_graph::GraphSnapshot;
use crate::dynamics::{saturate_matrix, SwarmState};
use crate::error::{Error, Result};
use crate::expert::{centralized_control, position_based_control, ExpertConfig};
use crate::params::ParamSet;
use crate::perception::encoder::LoadedEncoder;
use crate::perception::{EncoderParams, PerceptionMode, Sensed};

/// Control outputs per agent.
pub const CONTROL_DIM: usize = 2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    #[default]
    Dagnn,
    Grnn,
}

impl std::fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ControllerKind::Dagnn => "dagnn",
            ControllerKind::Grnn => "grnn",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub kind: ControllerKind,
    /// Filter taps `K`; delayed blocks use up to `K−1` exchanges.
    pub taps: usize,
    pub hidden_layers: Vec<usize>,
    pub hidden_activation: Activation,
    pub recurrent_hidden: usize,
    pub recurrent_activation: Activation,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            kind: ControllerKind::Dagnn,
            taps: 4,
            hidden_layers: vec![64, 64],
            hidden_activation: Activation::Relu,
            recurrent_hidden: 32,
            recurrent_activation: Activation::Tanh,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.taps < 1 {
            return Err(Error::Config("controller.taps must be at least 1".into()));
        }
        if self.hidden_layers.contains(&0) {
            return Err(Error::Config("controller.hidden_layers entries must be positive".into()));
        }
        if self.recurrent_hidden == 0 {
            return Err(Error::Config("controller.recurrent_hidden must be positive".into()));
        }
        Ok(())
    }
}

/// A learned controller: architecture, feature source, and every trainable
/// parameter (controller first, then encoder if any).
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub controller: ControllerConfig,
    pub perception: PerceptionMode,
    pub params: ParamSet,
}

impl Network {
    pub fn init(controller: ControllerConfig, perception: PerceptionMode, seed: u64) -> Result<Self> {
        controller.validate()?;
        perception.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = perception.feature_dim();
        let mut params = match controller.kind {
            ControllerKind::Dagnn => DagnnParams::init(
                controller.taps * f,
                &controller.hidden_layers,
                CONTROL_DIM,
                controller.hidden_activation,
                &mut rng,
            )
            .to_param_set(),
            ControllerKind::Grnn => GrnnParams::init(
                controller.taps,
                f,
                controller.recurrent_hidden,
                CONTROL_DIM,
                controller.recurrent_activation,
                &mut rng,
            )
            .to_param_set(),
        };
        if let PerceptionMode::Panorama { encoder, .. } = &perception {
            params.extend(EncoderParams::init(encoder.clone(), &mut rng)?.to_param_set());
        }
        Ok(Network {
            controller,
            perception,
            params,
        })
    }

    /// Rebuilds a network from stored parameters, checking names and shapes.
    pub fn from_params(controller: ControllerConfig, perception: PerceptionMode, params: ParamSet) -> Result<Self> {
        controller.validate()?;
        perception.validate()?;
        let net = Network {
            controller,
            perception,
            params,
        };
        let expected = Network::init(net.controller.clone(), net.perception.clone(), 0)?;
        if expected.params.len() != net.params.len() {
            return Err(Error::Format {
                kind: "parameter set",
                message: format!("expected {} parameters, found {}", expected.params.len(), net.params.len()),
            });
        }
        for (want, got) in expected.params.params.iter().zip(&net.params.params) {
            net.params.take(&want.name, want.value.dim())?;
            if want.name != got.name {
                return Err(Error::Format {
                    kind: "parameter set",
                    message: format!("expected {} in this position, found {}", want.name, got.name),
                });
            }
        }
        if !net.params.is_finite() {
            return Err(Error::NonFinite("network parameters"));
        }
        Ok(net)
    }

    pub fn features(&self) -> usize {
        self.perception.feature_dim()
    }

    fn controller_param_count(&self) -> usize {
        match self.controller.kind {
            ControllerKind::Dagnn => 2 * (self.controller.hidden_layers.len() + 1),
            ControllerKind::Grnn => 5,
        }
    }

    pub fn dagnn(&self) -> Result<DagnnParams> {
        let c = &self.controller;
        DagnnParams::from_param_set(
            c.taps * self.features(),
            &c.hidden_layers,
            CONTROL_DIM,
            c.hidden_activation,
            &self.params,
        )
    }

    pub fn grnn(&self) -> Result<GrnnParams> {
        let c = &self.controller;
        GrnnParams::from_param_set(
            c.taps,
            self.features(),
            c.recurrent_hidden,
            CONTROL_DIM,
            c.recurrent_activation,
            &self.params,
        )
    }

    pub fn encoder(&self) -> Result<Option<EncoderParams>> {
        match &self.perception {
            PerceptionMode::Panorama { encoder, .. } => {
                Ok(Some(EncoderParams::from_param_set(encoder.clone(), &self.params)?))
            }
            _ => Ok(None),
        }
    }

    /// Puts every parameter into the backend as a constant.
    pub fn load<B: Backend>(&self, b: &mut B) -> LoadedNetwork<B::M> {
        let weights = self.params.params.iter().map(|p| b.constant(p.value.clone())).collect();
        self.bind(weights)
    }

    /// Wraps already-resident parameters, given in `params` order.
    pub fn bind<M: Clone>(&self, mut weights: Vec<M>) -> LoadedNetwork<M> {
        let split = self.controller_param_count();
        let encoder = match &self.perception {
            PerceptionMode::Panorama { encoder, .. } => {
                let tail: Vec<M> = weights.drain(split..).collect();
                let tail: [M; 6] = match tail.try_into() {
                    Ok(t) => t,
                    Err(_) => panic!("encoder expects six parameters"),
                };
                Some(LoadedEncoder {
                    config: encoder.clone(),
                    weights: tail,
                })
            }
            _ => None,
        };
        LoadedNetwork {
            config: self.controller.clone(),
            features: self.features(),
            weights,
            encoder,
        }
    }

    pub fn initial_state<B: Backend>(&self, b: &mut B, n: usize) -> NetState<B::M> {
        let c = &self.controller;
        let f = self.features();
        match c.kind {
            ControllerKind::Dagnn => NetState::Dagnn(DelayLine::zeros(b, c.taps, n, f)),
            ControllerKind::Grnn => NetState::Grnn(HiddenState::zeros(b, c.taps, n, f, c.recurrent_hidden)),
        }
    }
}

/// Per-rollout controller memory.
#[derive(Clone, Debug)]
pub enum NetState<M> {
    Dagnn(DelayLine<M>),
    Grnn(HiddenState<M>),
}

impl NetState<Array2<f64>> {
    /// Copies the state into `b` as constants, cutting gradient flow.
    pub fn detach<B: Backend>(&self, b: &mut B) -> NetState<B::M> {
        match self {
            NetState::Dagnn(line) => NetState::Dagnn(line.detach(b)),
            NetState::Grnn(h) => NetState::Grnn(h.detach(b)),
        }
    }
}

pub struct LoadedNetwork<M> {
    pub config: ControllerConfig,
    pub features: usize,
    pub weights: Vec<M>,
    pub encoder: Option<LoadedEncoder<M>>,
}

impl<M: Clone> LoadedNetwork<M> {
    /// Feature matrix `X(t)` from raw sensing.
    pub fn features<B: Backend<M = M>>(&self, b: &mut B, sensed: &Sensed) -> M {
        match (sensed, &self.encoder) {
            (Sensed::Features(x), _) => b.constant(x.clone()),
            (Sensed::Panoramas(p), Some(enc)) => {
                let p = b.constant(p.clone());
                enc.forward(b, &p)
            }
            (Sensed::Panoramas(_), None) => panic!("panoramas need an encoder"),
        }
    }

    /// Advances the controller by one step and returns the raw `N×2` control.
    pub fn step<B: Backend<M = M>>(
        &self,
        b: &mut B,
        state: &mut NetState<M>,
        snapshot: &Arc<GraphSnapshot>,
        x: M,
    ) -> M {
        match state {
            NetState::Dagnn(line) => {
                line.push(b, snapshot, x);
                let z = b.hcat(line.blocks());
                mlp(b, &self.weights, self.config.hidden_activation, &z)
            }
            NetState::Grnn(h) => {
                grnn_cell(b, &self.weights, self.config.recurrent_activation, h, snapshot, x);
                grnn_readout(b, &self.weights, h)
            }
        }
    }
}

/// Any controller that can drive a rollout.
#[derive(Clone, Debug, PartialEq)]
pub enum Controller {
    /// Centralized expert with global knowledge.
    Expert(ExpertConfig),
    /// Expert law restricted to one-hop neighbors.
    PositionBased(ExpertConfig),
    Learned(Arc<Network>),
}

impl Controller {
    pub fn name(&self) -> String {
        match self {
            Controller::Expert(_) => "expert".into(),
            Controller::PositionBased(_) => "position-based".into(),
            Controller::Learned(net) => net.controller.kind.to_string(),
        }
    }

    pub fn perception(&self) -> Option<&PerceptionMode> {
        match self {
            Controller::Learned(net) => Some(&net.perception),
            _ => None,
        }
    }

    pub fn start(&self, n: usize) -> Result<Policy<'_>> {
        Ok(match self {
            Controller::Learned(net) => Policy {
                controller: self,
                loaded: Some(net.load(&mut Eager)),
                state: Some(net.initial_state(&mut Eager, n)),
            },
            _ => Policy {
                controller: self,
                loaded: None,
                state: None,
            },
        })
    }
}

/// A controller in the middle of a rollout.
pub struct Policy<'a> {
    controller: &'a Controller,
    loaded: Option<LoadedNetwork<Array2<f64>>>,
    state: Option<NetState<Array2<f64>>>,
}

impl Policy<'_> {
    /// Saturated control for every agent. `sensed` is only read by learned
    /// controllers.
    pub fn act(
        &mut self,
        state: &SwarmState,
        snapshot: &Arc<GraphSnapshot>,
        sensed: Option<&Sensed>,
        u_max: f64,
    ) -> Result<Array2<f64>> {
        let mut u = match self.controller {
            Controller::Expert(cfg) => centralized_control(state, cfg)?,
            Controller::PositionBased(cfg) => position_based_control(state, snapshot, cfg)?,
            Controller::Learned(_) => {
                let (Some(loaded), Some(net_state)) = (&self.loaded, &mut self.state) else {
                    unreachable!("learned policy always carries weights")
                };
                let sensed = sensed.ok_or_else(|| Error::Config("learned controller needs sensing".into()))?;
                let x = loaded.features(&mut Eager, sensed);
                loaded.step(&mut Eager, net_state, snapshot, x)
            }
        };
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("control"));
        }
        saturate_matrix(&mut u, u_max);
        Ok(u)
    }

    pub fn net_state(&self) -> Option<&NetState<Array2<f64>>> {
        self.state.as_ref()
    }
}
