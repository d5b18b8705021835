//! Time-varying communication graphs and the graph shift operation.
//!
//! A [`GraphSnapshot`] stores each agent's in-neighbor list together with the
//! row-normalized weights `s_ij = 1/|N_i|`. Shifting a signal never touches the
//! dense matrix: agent `i` combines the rows received from its neighbors.

use std::cell::Cell;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::vec2::Vec2;

pub const DEFAULT_DISK_RADIUS: f64 = 1.5;
pub const DEFAULT_KNN: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CommModel {
    /// Agents within `radius` meters communicate.
    Disk { radius: f64 },
    /// Each agent hears from its `k` nearest agents (directed).
    Knn { k: usize },
}

impl Default for CommModel {
    fn default() -> Self {
        CommModel::Disk {
            radius: DEFAULT_DISK_RADIUS,
        }
    }
}

impl CommModel {
    pub fn disk_radius(&self) -> Option<f64> {
        match *self {
            CommModel::Disk { radius } => Some(radius),
            CommModel::Knn { .. } => None,
        }
    }

    pub fn validate(&self, n_agents: usize) -> Result<()> {
        match *self {
            CommModel::Disk { radius } if !(radius > 0.0 && radius.is_finite()) => {
                Err(Error::Config("comm.radius must be positive".into()))
            }
            CommModel::Knn { k } if k < 1 || k >= n_agents => Err(Error::Config(format!(
                "comm.k must satisfy 1 <= k < N (k = {k}, N = {n_agents})"
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSnapshot {
    pub time_index: usize,
    /// `neighbors[i]` lists `N_i(t)` in ascending agent order.
    neighbors: Vec<Vec<usize>>,
    /// `weights[i][m]` is `s_{i, neighbors[i][m]}`.
    weights: Vec<Vec<f64>>,
}

thread_local! {
    static EXCHANGES: Cell<u64> = const { Cell::new(0) };
}

/// Number of neighbor-to-agent row transfers performed by [`graph_shift`] and
/// its adjoint on the current thread since the last reset.
pub fn exchange_count() -> u64 {
    EXCHANGES.with(Cell::get)
}

pub fn reset_exchange_count() {
    EXCHANGES.with(|c| c.set(0));
}

fn record_exchanges(k: usize) {
    EXCHANGES.with(|c| c.set(c.get() + k as u64));
}

impl GraphSnapshot {
    /// Builds a snapshot from explicit in-neighbor lists; weights are
    /// `1/|N_i|`. Lists are sorted and deduplicated.
    pub fn from_neighbors(time_index: usize, mut neighbors: Vec<Vec<usize>>) -> Result<Self> {
        let n = neighbors.len();
        for (i, list) in neighbors.iter_mut().enumerate() {
            list.sort_unstable();
            list.dedup();
            if list.iter().any(|&j| j >= n || j == i) {
                return Err(shape_err(format!("invalid neighbor list for agent {i}")));
            }
        }
        let weights = neighbors
            .iter()
            .map(|l| vec![1.0 / l.len().max(1) as f64; l.len()])
            .collect();
        Ok(GraphSnapshot {
            time_index,
            neighbors,
            weights,
        })
    }

    /// Builds a snapshot with explicit weights, e.g. an unnormalized adjacency.
    pub fn from_weighted(
        time_index: usize,
        neighbors: Vec<Vec<usize>>,
        weights: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = neighbors.len();
        if weights.len() != n {
            return Err(shape_err("weights and neighbor lists differ in length"));
        }
        for (i, (l, w)) in neighbors.iter().zip(&weights).enumerate() {
            if l.len() != w.len() {
                return Err(shape_err(format!("agent {i}: weight count mismatch")));
            }
            if l.windows(2).any(|p| p[0] >= p[1]) || l.iter().any(|&j| j >= n || j == i) {
                return Err(shape_err(format!("agent {i}: neighbors must be ascending, no self loops")));
            }
            if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::NonFinite("gso weights"));
            }
        }
        Ok(GraphSnapshot {
            time_index,
            neighbors,
            weights,
        })
    }

    /// Snapshot with no edges.
    pub fn empty(time_index: usize, n: usize) -> Self {
        GraphSnapshot {
            time_index,
            neighbors: vec![Vec::new(); n],
            weights: vec![Vec::new(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn weights(&self, i: usize) -> &[f64] {
        &self.weights[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }

    /// Dense `S(t)`; row `i` holds the weights agent `i` applies.
    pub fn gso(&self) -> Array2<f64> {
        let n = self.len();
        let mut s = Array2::zeros((n, n));
        for i in 0..n {
            for (&j, &w) in self.neighbors[i].iter().zip(&self.weights[i]) {
                s[[i, j]] = w;
            }
        }
        s
    }

    /// Relabels agents so that agent `k` of the result is agent `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> GraphSnapshot {
        let n = self.len();
        let mut inverse = vec![0; n];
        for (k, &p) in perm.iter().enumerate() {
            inverse[p] = k;
        }
        let mut neighbors = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for &p in perm {
            let mut pairs: Vec<(usize, f64)> = self.neighbors[p]
                .iter()
                .zip(&self.weights[p])
                .map(|(&j, &w)| (inverse[j], w))
                .collect();
            pairs.sort_by_key(|&(j, _)| j);
            neighbors.push(pairs.iter().map(|&(j, _)| j).collect());
            weights.push(pairs.iter().map(|&(_, w)| w).collect());
        }
        GraphSnapshot {
            time_index: self.time_index,
            neighbors,
            weights,
        }
    }
}

/// Builds the communication graph for the given positions.
///
/// Disk: `j ∈ N_i` iff `0 < ‖r_i − r_j‖ ≤ R`. KNN: `N_i` holds the `k` agents
/// nearest to `i`, ties broken by ascending index.
pub fn build_gso(positions: &[Vec2], model: &CommModel, time_index: usize) -> Result<GraphSnapshot> {
    let n = positions.len();
    if n < 2 {
        return Err(shape_err(format!("need at least 2 agents, got {n}")));
    }
    model.validate(n)?;
    if positions.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("positions"));
    }
    let neighbors = match *model {
        CommModel::Disk { radius } => (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| {
                        let d = (positions[i] - positions[j]).norm();
                        j != i && d > 0.0 && d <= radius
                    })
                    .collect()
            })
            .collect(),
        CommModel::Knn { k } => (0..n)
            .map(|i| {
                let mut others: Vec<(f64, usize)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| ((positions[i] - positions[j]).norm_sq(), j))
                    .collect();
                others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let mut list: Vec<usize> = others[..k].iter().map(|&(_, j)| j).collect();
                list.sort_unstable();
                list
            })
            .collect(),
    };
    GraphSnapshot::from_neighbors(time_index, neighbors)
}

/// Computes `S(t)·X` by neighbor exchanges: row `i` is `Σ_{j∈N_i} s_ij x_j`.
pub fn graph_shift(snapshot: &GraphSnapshot, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let n = snapshot.len();
    if x.nrows() != n {
        return Err(shape_err(format!(
            "signal has {} rows, graph has {n} agents",
            x.nrows()
        )));
    }
    let mut out = Array2::zeros(x.raw_dim());
    let mut terms = Vec::new();
    for i in 0..n {
        let (nbrs, wts) = (&snapshot.neighbors[i], &snapshot.weights[i]);
        for c in 0..x.ncols() {
            terms.clear();
            terms.extend(nbrs.iter().zip(wts).map(|(&j, &w)| w * x[[j, c]]));
            out[[i, c]] = canonical_sum(&mut terms);
        }
    }
    record_exchanges(snapshot.edge_count());
    Ok(out)
}

/// Sums in ascending value order so the result does not depend on how the
/// neighbors happen to be labeled.
fn canonical_sum(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().fold(0.0, |acc, &t| acc + t)
}

/// Computes `S(t)ᵀ·G`, the adjoint of [`graph_shift`].
pub fn graph_shift_adjoint(snapshot: &GraphSnapshot, g: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let n = snapshot.len();
    if g.nrows() != n {
        return Err(shape_err(format!(
            "signal has {} rows, graph has {n} agents",
            g.nrows()
        )));
    }
    let mut out = Array2::zeros(g.raw_dim());
    for i in 0..n {
        for (&j, &w) in snapshot.neighbors[i].iter().zip(&snapshot.weights[i]) {
            out.row_mut(j).scaled_add(w, &g.row(i));
        }
    }
    record_exchanges(snapshot.edge_count());
    Ok(out)
}

/// Smallest in-neighborhood size over all agents.
pub fn min_degree(snapshot: &GraphSnapshot) -> usize {
    snapshot.neighbors.iter().map(Vec::len).min().unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn line(n: usize, spacing: f64) -> Vec<Vec2> {
        (0..n).map(|i| Vec2::new(i as f64 * spacing, 0.0)).collect()
    }

    fn path3_unnormalized() -> GraphSnapshot {
        GraphSnapshot::from_weighted(
            0,
            vec![vec![1], vec![0, 2], vec![1]],
            vec![vec![1.0], vec![1.0, 1.0], vec![1.0]],
        )
        .unwrap()
    }

    #[test]
    fn two_agents_in_range() {
        let s = build_gso(&line(2, 1.0), &CommModel::Disk { radius: 1.5 }, 0).unwrap();
        assert_eq!(s.gso(), array![[0.0, 1.0], [1.0, 0.0]]);
    }

    #[test]
    fn two_agents_out_of_range() {
        let s = build_gso(&line(2, 2.0), &CommModel::Disk { radius: 1.5 }, 0).unwrap();
        assert_eq!(s.gso(), Array2::<f64>::zeros((2, 2)));
    }

    #[test]
    fn collinear_three() {
        let s = build_gso(&line(3, 1.0), &CommModel::Disk { radius: 1.5 }, 0).unwrap();
        assert_eq!(s.degree(0), 1);
        assert_eq!(s.degree(1), 2);
        assert_eq!(s.degree(2), 1);
        assert_eq!(s.gso().row(1).to_vec(), vec![0.5, 0.0, 0.5]);
        assert_eq!(min_degree(&s), 1);
    }

    #[test]
    fn shift_of_empty_graph_is_zero() {
        let s = GraphSnapshot::empty(0, 3);
        let x = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        assert_eq!(graph_shift(&s, x.view()).unwrap(), Array2::<f64>::zeros((3, 2)));
    }

    #[test]
    fn shift_on_unnormalized_path() {
        let x = array![[1.0], [2.0], [3.0]];
        let y = graph_shift(&path3_unnormalized(), x.view()).unwrap();
        assert_eq!(y, array![[2.0], [4.0], [2.0]]);
    }

    #[test]
    fn shift_rejects_mismatch() {
        let x = Array2::<f64>::zeros((4, 2));
        assert!(graph_shift(&GraphSnapshot::empty(0, 3), x.view()).is_err());
    }

    #[test]
    fn min_degree_examples() {
        let complete =
            GraphSnapshot::from_neighbors(0, vec![vec![1, 2], vec![0, 2], vec![0, 1]]).unwrap();
        assert_eq!(min_degree(&complete), 2);
        assert_eq!(min_degree(&GraphSnapshot::empty(0, 4)), 0);
        assert_eq!(min_degree(&path3_unnormalized()), 1);
    }

    #[test]
    fn knn_is_directed_with_index_ties() {
        // Agent 0 sits between 1 and 2 at equal distance; k = 1 picks agent 1.
        let pos = vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(-1.0, 0.0), Vec2::new(5.0, 0.0)];
        let s = build_gso(&pos, &CommModel::Knn { k: 1 }, 0).unwrap();
        assert_eq!(s.neighbors(0), &[1]);
        assert_eq!(s.neighbors(3), &[1]);
        assert_eq!(s.neighbors(1), &[0]);
        // 3 hears from 1, but 1 does not hear from 3.
        assert!(!s.neighbors(1).contains(&3));
    }

    #[test]
    fn knn_rejects_invalid_k() {
        assert!(build_gso(&line(3, 1.0), &CommModel::Knn { k: 3 }, 0).is_err());
        assert!(build_gso(&line(3, 1.0), &CommModel::Knn { k: 0 }, 0).is_err());
    }

    #[test]
    fn shift_counts_exchanges() {
        reset_exchange_count();
        let s = build_gso(&line(3, 1.0), &CommModel::Disk { radius: 1.5 }, 0).unwrap();
        graph_shift(&s, Array2::<f64>::ones((3, 2)).view()).unwrap();
        assert_eq!(exchange_count(), 4);
    }

    #[test]
    fn adjoint_matches_transpose() {
        let s = build_gso(&line(4, 0.9), &CommModel::Disk { radius: 1.0 }, 0).unwrap();
        let g = array![[1.0, -1.0], [0.5, 2.0], [3.0, 0.0], [-2.0, 1.0]];
        let expected = s.gso().t().dot(&g);
        assert_eq!(graph_shift_adjoint(&s, g.view()).unwrap(), expected);
    }

    #[test]
    fn shift_is_label_independent() {
        let s = GraphSnapshot::from_neighbors(0, vec![vec![1, 2, 3], vec![0], vec![0], vec![0]]).unwrap();
        let x = array![[0.0], [0.1], [0.7], [1e-17]];
        let y = graph_shift(&s, x.view()).unwrap();
        let perm = [0, 3, 1, 2];
        let xp = Array2::from_shape_fn((4, 1), |(i, c)| x[[perm[i], c]]);
        let yp = graph_shift(&s.permuted(&perm), xp.view()).unwrap();
        for i in 0..4 {
            assert_eq!(yp[[i, 0]], y[[perm[i], 0]]);
        }
    }
}
