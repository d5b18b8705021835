//! Graph recurrent neural network.
//!
//! The hidden signal is updated by time-delayed graph filters of the input
//! and of the previous hidden signal, and read out by a third filter:
//!
//! ```text
//! Z(t) = σ(Σ_k S(t)⋯S(t−k+1)·X(t−k)·A_k + Σ_k S(t)⋯S(t−k+1)·Z(t−1−k)·B_k + b_h)
//! U(t) = Σ_k S(t)⋯S(t−k+1)·Z(t−k)·C_k + b_o
//! ```

use std::sync::Arc;

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;

use crate::autodiff::{Activation, Backend, Eager};
use crate::comm_graph::GraphSnapshot;
use crate::controllers::delay::DelayLine;
use crate::error::{shape_err, Result};
use crate::params::{uniform_init, Param, ParamSet};

/// Filter taps stacked row-wise: `a` is `(K·F)×H`, `b` is `(K·H)×H`, `c` is
/// `(K·H)×G`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrnnParams {
    pub taps: usize,
    pub a: Array2<f64>,
    pub b: Array2<f64>,
    pub c: Array2<f64>,
    pub bias_hidden: Array2<f64>,
    pub bias_out: Array2<f64>,
    pub activation: Activation,
}

impl GrnnParams {
    pub fn init(
        taps: usize,
        features: usize,
        hidden: usize,
        outputs: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let (kf, kh) = (taps * features, taps * hidden);
        GrnnParams {
            taps,
            a: uniform_init(rng, kf, hidden, kf),
            b: uniform_init(rng, kh, hidden, kh),
            c: uniform_init(rng, kh, outputs, kh),
            bias_hidden: uniform_init(rng, 1, hidden, kf),
            bias_out: uniform_init(rng, 1, outputs, kh),
            activation,
        }
    }

    pub fn features(&self) -> usize {
        self.a.nrows() / self.taps
    }

    pub fn hidden(&self) -> usize {
        self.a.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.c.ncols()
    }

    pub fn a_tap(&self, k: usize) -> ArrayView2<'_, f64> {
        let f = self.features();
        self.a.slice(s![k * f..(k + 1) * f, ..])
    }

    pub fn b_tap(&self, k: usize) -> ArrayView2<'_, f64> {
        let h = self.hidden();
        self.b.slice(s![k * h..(k + 1) * h, ..])
    }

    pub fn c_tap(&self, k: usize) -> ArrayView2<'_, f64> {
        let h = self.hidden();
        self.c.slice(s![k * h..(k + 1) * h, ..])
    }

    pub fn to_param_set(&self) -> ParamSet {
        ParamSet::new(vec![
            Param::new("grnn.a", self.a.clone()),
            Param::new("grnn.b", self.b.clone()),
            Param::new("grnn.c", self.c.clone()),
            Param::new("grnn.bias_hidden", self.bias_hidden.clone()),
            Param::new("grnn.bias_out", self.bias_out.clone()),
        ])
    }

    pub fn from_param_set(
        taps: usize,
        features: usize,
        hidden: usize,
        outputs: usize,
        activation: Activation,
        set: &ParamSet,
    ) -> Result<Self> {
        let (kf, kh) = (taps * features, taps * hidden);
        Ok(GrnnParams {
            taps,
            a: set.take("grnn.a", (kf, hidden))?,
            b: set.take("grnn.b", (kh, hidden))?,
            c: set.take("grnn.c", (kh, outputs))?,
            bias_hidden: set.take("grnn.bias_hidden", (1, hidden))?,
            bias_out: set.take("grnn.bias_out", (1, outputs))?,
            activation,
        })
    }

    fn weights(&self) -> [Array2<f64>; 5] {
        [
            self.a.clone(),
            self.b.clone(),
            self.c.clone(),
            self.bias_hidden.clone(),
            self.bias_out.clone(),
        ]
    }
}

/// `Z(t)` together with the delay lines feeding each filter.
#[derive(Clone, Debug)]
pub struct HiddenState<M = Array2<f64>> {
    pub z: M,
    pub input_line: DelayLine<M>,
    pub hidden_line: DelayLine<M>,
    pub readout_line: DelayLine<M>,
}

impl<M: Clone> HiddenState<M> {
    pub fn zeros<B: Backend<M = M>>(b: &mut B, taps: usize, n: usize, features: usize, hidden: usize) -> Self {
        HiddenState {
            z: b.zeros(n, hidden),
            input_line: DelayLine::zeros(b, taps, n, features),
            hidden_line: DelayLine::zeros(b, taps, n, hidden),
            readout_line: DelayLine::zeros(b, taps, n, hidden),
        }
    }
}

impl HiddenState<Array2<f64>> {
    pub fn detach<B: Backend>(&self, b: &mut B) -> HiddenState<B::M> {
        HiddenState {
            z: b.constant(self.z.clone()),
            input_line: self.input_line.detach(b),
            hidden_line: self.hidden_line.detach(b),
            readout_line: self.readout_line.detach(b),
        }
    }
}

/// Advances the hidden state; `weights` is `[a, b, c, bias_hidden, bias_out]`.
pub fn grnn_cell<B: Backend>(
    b: &mut B,
    weights: &[B::M],
    activation: Activation,
    state: &mut HiddenState<B::M>,
    snapshot: &Arc<GraphSnapshot>,
    x: B::M,
) {
    state.input_line.push(b, snapshot, x);
    let prev = state.z.clone();
    state.hidden_line.push(b, snapshot, prev);
    let from_input = state.input_line.filter(b, &weights[0]);
    let from_hidden = state.hidden_line.filter(b, &weights[1]);
    let pre = b.add(&from_input, &from_hidden);
    let pre = b.add_bias(&pre, &weights[3]);
    state.z = b.activate(&pre, activation);
    let z = state.z.clone();
    state.readout_line.push(b, snapshot, z);
}

pub fn grnn_readout<B: Backend>(b: &mut B, weights: &[B::M], state: &HiddenState<B::M>) -> B::M {
    let u = state.readout_line.filter(b, &weights[2]);
    b.add_bias(&u, &weights[4])
}

pub fn grnn_step(
    x: &Array2<f64>,
    hidden: &mut HiddenState,
    snapshot: &Arc<GraphSnapshot>,
    params: &GrnnParams,
) -> Result<()> {
    let n = hidden.z.nrows();
    if x.dim() != (n, params.features()) {
        return Err(shape_err(format!(
            "features are {:?}, network expects {:?}",
            x.dim(),
            (n, params.features())
        )));
    }
    if snapshot.len() != n || hidden.z.ncols() != params.hidden() || hidden.input_line.taps() != params.taps {
        return Err(shape_err("hidden state does not match graph or parameters"));
    }
    grnn_cell(&mut Eager, &params.weights(), params.activation, hidden, snapshot, x.clone());
    Ok(())
}

pub fn grnn_output(hidden: &HiddenState, params: &GrnnParams) -> Result<Array2<f64>> {
    if hidden.z.ncols() != params.hidden() || hidden.readout_line.taps() != params.taps {
        return Err(shape_err("hidden state does not match parameters"));
    }
    Ok(grnn_readout(&mut Eager, &params.weights(), hidden))
}
