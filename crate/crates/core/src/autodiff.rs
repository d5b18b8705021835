//! Matrix-valued evaluation backends.
//!
//! Controllers and the observation encoder are written once against
//! [`Backend`]. [`Eager`] evaluates directly on arrays and is what rollouts
//! use; [`Tape`] records every operation so that [`Tape::backward`] can
//! produce exact reverse-mode gradients for training. Both backends share
//! the same forward kernels, so values agree bit for bit.

use std::sync::Arc;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::comm_graph::{graph_shift, graph_shift_adjoint, GraphSnapshot};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Circular 1-D convolution over the azimuth axis. Signals are laid out
/// row-per-agent with columns `channel * width + bin`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub width: usize,
    pub kernel: usize,
}

/// Non-overlapping average pooling along the azimuth axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolSpec {
    pub channels: usize,
    pub width: usize,
    pub window: usize,
}

impl PoolSpec {
    pub fn out_width(&self) -> usize {
        self.width / self.window
    }
}

pub trait Backend {
    type M: Clone;

    fn constant(&mut self, value: Array2<f64>) -> Self::M;
    fn value<'a>(&'a self, m: &'a Self::M) -> &'a Array2<f64>;
    fn matmul(&mut self, a: &Self::M, b: &Self::M) -> Self::M;
    fn add(&mut self, a: &Self::M, b: &Self::M) -> Self::M;
    /// Adds a `1×m` row to every row of `a`.
    fn add_bias(&mut self, a: &Self::M, bias: &Self::M) -> Self::M;
    fn activate(&mut self, a: &Self::M, act: Activation) -> Self::M;
    /// One round of neighbor exchanges, `S·a`.
    fn shift(&mut self, gso: &Arc<GraphSnapshot>, a: &Self::M) -> Self::M;
    fn hcat(&mut self, parts: &[Self::M]) -> Self::M;
    fn conv1d(&mut self, x: &Self::M, weight: &Self::M, bias: &Self::M, spec: ConvSpec) -> Self::M;
    fn avg_pool(&mut self, x: &Self::M, spec: PoolSpec) -> Self::M;

    fn zeros(&mut self, rows: usize, cols: usize) -> Self::M {
        self.constant(Array2::zeros((rows, cols)))
    }
}

mod kernels {
    use super::*;

    pub fn add_bias(a: &Array2<f64>, bias: &Array2<f64>) -> Array2<f64> {
        assert_eq!(bias.dim(), (1, a.ncols()), "bias shape");
        a + bias
    }

    pub fn activate(a: &Array2<f64>, act: Activation) -> Array2<f64> {
        a.mapv(|x| act.apply(x))
    }

    pub fn hcat(parts: &[&Array2<f64>]) -> Array2<f64> {
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        ndarray::concatenate(Axis(1), &views).expect("hcat row counts")
    }

    fn tap(pos: usize, t: usize, spec: ConvSpec) -> usize {
        (pos + t + spec.width - spec.kernel / 2) % spec.width
    }

    pub fn conv1d(x: &Array2<f64>, w: &Array2<f64>, b: &Array2<f64>, spec: ConvSpec) -> Array2<f64> {
        let ConvSpec {
            in_channels,
            out_channels,
            width,
            kernel,
        } = spec;
        assert_eq!(x.ncols(), in_channels * width, "conv input width");
        assert_eq!(w.dim(), (out_channels, in_channels * kernel), "conv weight shape");
        assert_eq!(b.dim(), (1, out_channels), "conv bias shape");
        let mut out = Array2::zeros((x.nrows(), out_channels * width));
        for n in 0..x.nrows() {
            let xr = x.row(n);
            let mut orow = out.row_mut(n);
            for co in 0..out_channels {
                for pos in 0..width {
                    let mut acc = b[[0, co]];
                    for ci in 0..in_channels {
                        for t in 0..kernel {
                            acc += w[[co, ci * kernel + t]] * xr[ci * width + tap(pos, t, spec)];
                        }
                    }
                    orow[co * width + pos] = acc;
                }
            }
        }
        out
    }

    /// Returns `(grad_x, grad_w, grad_b)`.
    pub fn conv1d_backward(
        x: &Array2<f64>,
        w: &Array2<f64>,
        g: &Array2<f64>,
        spec: ConvSpec,
    ) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let ConvSpec {
            in_channels,
            out_channels,
            width,
            kernel,
        } = spec;
        let mut gx = Array2::zeros(x.raw_dim());
        let mut gw = Array2::zeros(w.raw_dim());
        let mut gb = Array2::zeros((1, out_channels));
        for n in 0..x.nrows() {
            for co in 0..out_channels {
                for pos in 0..width {
                    let go = g[[n, co * width + pos]];
                    if go == 0.0 {
                        continue;
                    }
                    gb[[0, co]] += go;
                    for ci in 0..in_channels {
                        for t in 0..kernel {
                            let idx = ci * width + tap(pos, t, spec);
                            gw[[co, ci * kernel + t]] += go * x[[n, idx]];
                            gx[[n, idx]] += go * w[[co, ci * kernel + t]];
                        }
                    }
                }
            }
        }
        (gx, gw, gb)
    }

    pub fn avg_pool(x: &Array2<f64>, spec: PoolSpec) -> Array2<f64> {
        assert_eq!(x.ncols(), spec.channels * spec.width, "pool input width");
        let ow = spec.out_width();
        let scale = 1.0 / spec.window as f64;
        let mut out = Array2::zeros((x.nrows(), spec.channels * ow));
        for n in 0..x.nrows() {
            for c in 0..spec.channels {
                for q in 0..ow {
                    let mut acc = 0.0;
                    for r in 0..spec.window {
                        acc += x[[n, c * spec.width + q * spec.window + r]];
                    }
                    out[[n, c * ow + q]] = acc * scale;
                }
            }
        }
        out
    }

    pub fn avg_pool_backward(g: &Array2<f64>, spec: PoolSpec) -> Array2<f64> {
        let ow = spec.out_width();
        let scale = 1.0 / spec.window as f64;
        let mut gx = Array2::zeros((g.nrows(), spec.channels * spec.width));
        for n in 0..g.nrows() {
            for c in 0..spec.channels {
                for q in 0..ow {
                    let v = g[[n, c * ow + q]] * scale;
                    for r in 0..spec.window {
                        gx[[n, c * spec.width + q * spec.window + r]] += v;
                    }
                }
            }
        }
        gx
    }
}

/// Direct evaluation on owned arrays.
#[derive(Clone, Copy, Debug, Default)]
pub struct Eager;

impl Backend for Eager {
    type M = Array2<f64>;

    fn constant(&mut self, value: Array2<f64>) -> Array2<f64> {
        value
    }

    fn value<'a>(&'a self, m: &'a Array2<f64>) -> &'a Array2<f64> {
        m
    }

    fn matmul(&mut self, a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
        a.dot(b)
    }

    fn add(&mut self, a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
        a + b
    }

    fn add_bias(&mut self, a: &Array2<f64>, bias: &Array2<f64>) -> Array2<f64> {
        kernels::add_bias(a, bias)
    }

    fn activate(&mut self, a: &Array2<f64>, act: Activation) -> Array2<f64> {
        kernels::activate(a, act)
    }

    fn shift(&mut self, gso: &Arc<GraphSnapshot>, a: &Array2<f64>) -> Array2<f64> {
        graph_shift(gso, a.view()).expect("shift dimensions")
    }

    fn hcat(&mut self, parts: &[Array2<f64>]) -> Array2<f64> {
        let refs: Vec<&Array2<f64>> = parts.iter().collect();
        kernels::hcat(&refs)
    }

    fn conv1d(&mut self, x: &Array2<f64>, w: &Array2<f64>, b: &Array2<f64>, spec: ConvSpec) -> Array2<f64> {
        kernels::conv1d(x, w, b, spec)
    }

    fn avg_pool(&mut self, x: &Array2<f64>, spec: PoolSpec) -> Array2<f64> {
        kernels::avg_pool(x, spec)
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddBias(usize, usize),
    Activate(usize, Activation),
    Shift(usize, Arc<GraphSnapshot>),
    HCat(Vec<usize>),
    Conv { x: usize, w: usize, b: usize, spec: ConvSpec },
    Pool(usize, PoolSpec),
    /// Mean over rows of the row-wise L1 distance to a fixed target.
    L1(usize, Array2<f64>),
    Scale(usize, f64),
    Sum(Vec<usize>),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Reverse-mode recording backend.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every recorded value.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for `v`, zero-filled when `v` does not influence the output.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Array2<f64> {
        self.get(v).cloned().unwrap_or_else(|| Array2::zeros(shape))
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Registers a differentiable input.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// `(1/N) Σ_i ‖pred_i − target_i‖₁` as a `1×1` value.
    pub fn l1_loss(&mut self, pred: Var, target: &Array2<f64>) -> Var {
        let p = &self.nodes[pred.0].value;
        assert_eq!(p.dim(), target.dim(), "l1 target shape");
        let n = p.nrows().max(1) as f64;
        let total: f64 = p.iter().zip(target.iter()).map(|(a, b)| (a - b).abs()).sum();
        self.push(Array2::from_elem((1, 1), total / n), Op::L1(pred.0, target.clone()))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = &self.nodes[a.0].value * k;
        self.push(v, Op::Scale(a.0, k))
    }

    pub fn sum(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "sum of nothing");
        let mut v = self.nodes[parts[0].0].value.clone();
        for p in &parts[1..] {
            v += &self.nodes[p.0].value;
        }
        self.push(v, Op::Sum(parts.iter().map(|p| p.0).collect()))
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    /// Back-propagates from the scalar `output`.
    pub fn backward(&self, output: Var) -> Gradients {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Array2::ones(self.nodes[output.0].value.raw_dim()));

        fn accumulate(grads: &mut [Option<Array2<f64>>], idx: usize, g: Array2<f64>) {
            match &mut grads[idx] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    accumulate(&mut grads, *a, g.dot(&bv.t()));
                    accumulate(&mut grads, *b, av.t().dot(&g));
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::AddBias(a, b) => {
                    accumulate(&mut grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Activate(a, act) => {
                    let x = &self.nodes[*a].value;
                    let y = &node.value;
                    let mut ga = g.clone();
                    ndarray::Zip::from(&mut ga)
                        .and(x)
                        .and(y)
                        .for_each(|gv, &xv, &yv| *gv *= act.derivative(xv, yv));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Shift(a, gso) => {
                    let ga = graph_shift_adjoint(gso, g.view()).expect("shift dimensions");
                    accumulate(&mut grads, *a, ga);
                }
                Op::HCat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.nodes[p].value.ncols();
                        let slice = g.slice(ndarray::s![.., offset..offset + w]).to_owned();
                        accumulate(&mut grads, p, slice);
                        offset += w;
                    }
                }
                Op::Conv { x, w, b, spec } => {
                    let (gx, gw, gb) = kernels::conv1d_backward(
                        &self.nodes[*x].value,
                        &self.nodes[*w].value,
                        &g,
                        *spec,
                    );
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *w, gw);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Pool(x, spec) => {
                    accumulate(&mut grads, *x, kernels::avg_pool_backward(&g, *spec));
                }
                Op::L1(p, target) => {
                    let pv = &self.nodes[*p].value;
                    let n = pv.nrows().max(1) as f64;
                    let scale = g[[0, 0]] / n;
                    let mut gp = Array2::zeros(pv.raw_dim());
                    ndarray::Zip::from(&mut gp).and(pv).and(target).for_each(|o, &a, &b| {
                        // Subgradient 0 at exact agreement.
                        let d = a - b;
                        *o = if d > 0.0 {
                            scale
                        } else if d < 0.0 {
                            -scale
                        } else {
                            0.0
                        };
                    });
                    accumulate(&mut grads, *p, gp);
                }
                Op::Scale(a, k) => accumulate(&mut grads, *a, &g * *k),
                Op::Sum(parts) => {
                    for &p in parts {
                        accumulate(&mut grads, p, g.clone());
                    }
                }
            }
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }
}

impl Backend for Tape {
    type M = Var;

    fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    fn value<'a>(&'a self, m: &'a Var) -> &'a Array2<f64> {
        &self.nodes[m.0].value
    }

    fn matmul(&mut self, a: &Var, b: &Var) -> Var {
        let v = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        self.push(v, Op::MatMul(a.0, b.0))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Var {
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(v, Op::Add(a.0, b.0))
    }

    fn add_bias(&mut self, a: &Var, bias: &Var) -> Var {
        let v = kernels::add_bias(&self.nodes[a.0].value, &self.nodes[bias.0].value);
        self.push(v, Op::AddBias(a.0, bias.0))
    }

    fn activate(&mut self, a: &Var, act: Activation) -> Var {
        let v = kernels::activate(&self.nodes[a.0].value, act);
        self.push(v, Op::Activate(a.0, act))
    }

    fn shift(&mut self, gso: &Arc<GraphSnapshot>, a: &Var) -> Var {
        let v = graph_shift(gso, self.nodes[a.0].value.view()).expect("shift dimensions");
        self.push(v, Op::Shift(a.0, Arc::clone(gso)))
    }

    fn hcat(&mut self, parts: &[Var]) -> Var {
        let refs: Vec<&Array2<f64>> = parts.iter().map(|p| &self.nodes[p.0].value).collect();
        let v = kernels::hcat(&refs);
        self.push(v, Op::HCat(parts.iter().map(|p| p.0).collect()))
    }

    fn conv1d(&mut self, x: &Var, weight: &Var, bias: &Var, spec: ConvSpec) -> Var {
        let v = kernels::conv1d(
            &self.nodes[x.0].value,
            &self.nodes[weight.0].value,
            &self.nodes[bias.0].value,
            spec,
        );
        self.push(
            v,
            Op::Conv {
                x: x.0,
                w: weight.0,
                b: bias.0,
                spec,
            },
        )
    }

    fn avg_pool(&mut self, x: &Var, spec: PoolSpec) -> Var {
        let v = kernels::avg_pool(&self.nodes[x.0].value, spec);
        self.push(v, Op::Pool(x.0, spec))
    }
}
