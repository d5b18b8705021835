//! Delayed multi-hop aggregation built from one-hop exchanges.
//!
//! A [`DelayLine`] keeps `K` blocks. On every step block 0 becomes the new
//! signal and block `k` becomes `S(t)` applied to the previous step's block
//! `k−1`, so block `k` holds `S(t)⋯S(t−k+1)·X(t−k)`. Each step costs `K−1`
//! neighbor exchanges and no agent ever reads a non-neighbor's state.

use std::collections::VecDeque;
use std::sync::Arc;

use ndarray::{s, Array2};

use crate::autodiff::{Backend, Eager};
use crate::comm_graph::GraphSnapshot;
use crate::error::{shape_err, Error, Result};

#[derive(Clone, Debug)]
pub struct DelayLine<M> {
    blocks: Vec<M>,
}

impl<M: Clone> DelayLine<M> {
    /// `taps` zero blocks of size `n × width`.
    pub fn zeros<B: Backend<M = M>>(b: &mut B, taps: usize, n: usize, width: usize) -> Self {
        let zero = b.zeros(n, width);
        DelayLine {
            blocks: vec![zero; taps],
        }
    }

    pub fn from_blocks(blocks: Vec<M>) -> Self {
        DelayLine { blocks }
    }

    pub fn taps(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[M] {
        &self.blocks
    }

    pub fn push<B: Backend<M = M>>(&mut self, b: &mut B, snapshot: &Arc<GraphSnapshot>, x: M) {
        for k in (1..self.blocks.len()).rev() {
            self.blocks[k] = b.shift(snapshot, &self.blocks[k - 1]);
        }
        self.blocks[0] = x;
    }

    /// `Σ_k block_k · T_k` with the taps stacked row-wise into one matrix.
    pub fn filter<B: Backend<M = M>>(&self, b: &mut B, stacked_taps: &M) -> M {
        let z = b.hcat(&self.blocks);
        b.matmul(&z, stacked_taps)
    }
}

impl DelayLine<Array2<f64>> {
    pub fn detach<B: Backend>(&self, b: &mut B) -> DelayLine<B::M> {
        DelayLine {
            blocks: self.blocks.iter().map(|m| b.constant(m.clone())).collect(),
        }
    }
}

/// `Z^d(t)`: the `K` delayed blocks side by side, `N × (K·F)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregationSequence {
    pub values: Array2<f64>,
    pub features: usize,
}

impl AggregationSequence {
    pub fn taps(&self) -> usize {
        self.values.ncols() / self.features.max(1)
    }

    pub fn block(&self, k: usize) -> ndarray::ArrayView2<'_, f64> {
        let f = self.features;
        self.values.slice(s![.., k * f..(k + 1) * f])
    }
}

/// Last `K` feature matrices and graph snapshots together with the running
/// shifted products.
#[derive(Clone, Debug)]
pub struct HistoryBuffer {
    taps: usize,
    n: usize,
    features: usize,
    entries: VecDeque<(Array2<f64>, Arc<GraphSnapshot>)>,
    line: DelayLine<Array2<f64>>,
}

impl HistoryBuffer {
    pub fn new(taps: usize, n: usize, features: usize) -> Result<Self> {
        if taps < 1 {
            return Err(Error::Config("controller.taps must be at least 1".into()));
        }
        Ok(HistoryBuffer {
            taps,
            n,
            features,
            entries: VecDeque::with_capacity(taps),
            line: DelayLine::zeros(&mut Eager, taps, n, features),
        })
    }

    pub fn taps(&self) -> usize {
        self.taps
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Stored `(X(t−k), S(t−k))` for `k < len()`, newest first.
    pub fn entry(&self, k: usize) -> Option<&(Array2<f64>, Arc<GraphSnapshot>)> {
        self.entries.get(k)
    }

    pub fn push(&mut self, x: Array2<f64>, snapshot: Arc<GraphSnapshot>) -> Result<()> {
        if x.dim() != (self.n, self.features) {
            return Err(shape_err(format!(
                "features are {:?}, buffer expects {:?}",
                x.dim(),
                (self.n, self.features)
            )));
        }
        if snapshot.len() != self.n {
            return Err(shape_err(format!("graph has {} agents, buffer expects {}", snapshot.len(), self.n)));
        }
        if let Some((_, last)) = self.entries.front() {
            if snapshot.time_index != last.time_index + 1 {
                return Err(Error::Config(format!(
                    "history time indices must be consecutive ({} after {})",
                    snapshot.time_index, last.time_index
                )));
            }
        }
        self.line.push(&mut Eager, &snapshot, x.clone());
        self.entries.push_front((x, snapshot));
        self.entries.truncate(self.taps);
        Ok(())
    }
}

pub fn dagnn_aggregate(buffer: &HistoryBuffer) -> AggregationSequence {
    AggregationSequence {
        values: Eager.hcat(buffer.line.blocks()),
        features: buffer.features,
    }
}

/// Time-delayed graph filter `Σ_k S(t)⋯S(t−k+1)·X(t−k)·T_k`.
///
/// `signals[k]` is `X(t−k)` and `snapshots[k]` is `S(t−k)`; histories shorter
/// than `taps.len()` are zero-padded.
pub fn graph_filter(
    signals: &[Array2<f64>],
    snapshots: &[Arc<GraphSnapshot>],
    taps: &[Array2<f64>],
) -> Result<Array2<f64>> {
    let k_taps = taps.len();
    if k_taps == 0 {
        return Err(Error::Config("graph filter needs at least one tap".into()));
    }
    let Some(newest) = signals.first() else {
        return Err(shape_err("empty signal history"));
    };
    if snapshots.len() < signals.len().min(k_taps) {
        return Err(shape_err("fewer snapshots than signals"));
    }
    let (n, f) = newest.dim();
    let g = taps[0].ncols();
    for t in taps {
        if t.dim() != (f, g) {
            return Err(shape_err(format!("tap is {:?}, expected {:?}", t.dim(), (f, g))));
        }
    }
    // Replay the history oldest first through a delay line.
    let depth = signals.len().min(k_taps);
    let mut line = DelayLine::zeros(&mut Eager, k_taps, n, f);
    for k in (0..depth).rev() {
        if signals[k].dim() != (n, f) {
            return Err(shape_err(format!("signal {k} is {:?}, expected {:?}", signals[k].dim(), (n, f))));
        }
        line.push(&mut Eager, &snapshots[k], signals[k].clone());
    }
    let mut out = Array2::zeros((n, g));
    for (block, tap) in line.blocks().iter().zip(taps) {
        out += &block.dot(tap);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comm_graph::{build_gso, CommModel};
    use crate::vec2::Vec2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn path(time_index: usize) -> Arc<GraphSnapshot> {
        let pts = [Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(2.0, 0.0)];
        Arc::new(build_gso(&pts, &CommModel::Disk { radius: 1.2 }, time_index).unwrap())
    }

    fn dense_mul(s: &Array2<f64>, x: &Array2<f64>) -> Array2<f64> {
        Array2::from_shape_fn(x.dim(), |(i, c)| (0..s.ncols()).fold(0.0, |acc, j| acc + s[[i, j]] * x[[j, c]]))
    }

    fn dense_block(xs: &[Array2<f64>], gsos: &[Arc<GraphSnapshot>], k: usize) -> Array2<f64> {
        let mut m = xs[k].clone();
        for j in (0..k).rev() {
            m = dense_mul(&gsos[j].gso(), &m);
        }
        m
    }

    #[test]
    fn single_tap_is_identity() {
        let mut buf = HistoryBuffer::new(1, 3, 2).unwrap();
        let x = Array2::from_shape_fn((3, 2), |(i, j)| (i * 2 + j) as f64);
        buf.push(x.clone(), path(0)).unwrap();
        assert_eq!(dagnn_aggregate(&buf).values, x);
    }

    #[test]
    fn empty_graph_zeroes_delayed_blocks() {
        let mut buf = HistoryBuffer::new(3, 3, 2).unwrap();
        for t in 0..4 {
            buf.push(Array2::ones((3, 2)), Arc::new(GraphSnapshot::empty(t, 3))).unwrap();
        }
        let z = dagnn_aggregate(&buf);
        assert_eq!(z.block(0), Array2::<f64>::ones((3, 2)));
        assert!(z.block(1).iter().chain(z.block(2).iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn zero_taps_rejected() {
        assert!(HistoryBuffer::new(0, 3, 2).is_err());
    }

    #[test]
    fn non_consecutive_history_rejected() {
        let mut buf = HistoryBuffer::new(2, 3, 1).unwrap();
        buf.push(Array2::zeros((3, 1)), path(0)).unwrap();
        assert!(buf.push(Array2::zeros((3, 1)), path(2)).is_err());
    }

    #[test]
    fn path_matches_dense_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut buf = HistoryBuffer::new(3, 3, 2).unwrap();
        let mut xs = Vec::new();
        let mut gsos = Vec::new();
        for t in 0..5 {
            let x = Array2::from_shape_fn((3, 2), |_| rng.random_range(-1.0..1.0));
            buf.push(x.clone(), path(t)).unwrap();
            xs.insert(0, x);
            gsos.insert(0, path(t));
        }
        let z = dagnn_aggregate(&buf);
        for k in 0..3 {
            assert_eq!(z.block(k), dense_block(&xs, &gsos, k));
        }
    }

    #[test]
    fn filter_single_tap_uses_no_exchanges() {
        let x = Array2::from_shape_fn((3, 2), |(i, j)| (i + j) as f64);
        let t0 = Array2::from_shape_fn((2, 4), |(i, j)| (i * 4 + j) as f64);
        crate::comm_graph::reset_exchange_count();
        let out = graph_filter(&[x.clone()], &[path(0)], &[t0.clone()]).unwrap();
        assert_eq!(crate::comm_graph::exchange_count(), 0);
        assert_eq!(out, x.dot(&t0));
    }

    #[test]
    fn filter_identity_tap() {
        let x = Array2::from_shape_fn((3, 2), |(i, j)| (i * 3 + j) as f64);
        let taps = [Array2::eye(2), Array2::zeros((2, 2)), Array2::zeros((2, 2))];
        let out = graph_filter(&[x.clone(), x.clone()], &[path(1), path(0)], &taps).unwrap();
        assert_eq!(out, x);
    }
}
