use ndarray::Array2;

use crate::comm_graph::GraphSnapshot;
use crate::dynamics::SwarmState;
use crate::error::{shape_err, Error, Result};
use crate::vec2::Vec2;

pub const EXACT_FEATURES: usize = 6;

/// Local state of agent `i` built from its neighbors:
/// `Σ (v_i − v_j)`, `Σ r_ij/‖r_ij‖⁴`, `Σ r_ij/‖r_ij‖²` over `j ∈ N_i`.
pub fn exact_features(
    state: &SwarmState,
    snapshot: &GraphSnapshot,
    i: usize,
) -> Result<[f64; EXACT_FEATURES]> {
    if snapshot.len() != state.len() {
        return Err(shape_err(format!(
            "graph has {} agents, swarm has {}",
            snapshot.len(),
            state.len()
        )));
    }
    let me = state.agents[i];
    let mut dv = Vec2::ZERO;
    let mut quartic = Vec2::ZERO;
    let mut quadratic = Vec2::ZERO;
    for &j in snapshot.neighbors(i) {
        let other = state.agents[j];
        let r_ij = me.position - other.position;
        let d2 = r_ij.norm_sq();
        if d2 == 0.0 {
            return Err(Error::Coincident(i, j));
        }
        dv += me.velocity - other.velocity;
        quartic += r_ij * (1.0 / (d2 * d2));
        quadratic += r_ij * (1.0 / d2);
    }
    Ok([dv.x, dv.y, quartic.x, quartic.y, quadratic.x, quadratic.y])
}

/// Row-wise stack of [`exact_features`] for every agent.
pub fn exact_feature_matrix(state: &SwarmState, snapshot: &GraphSnapshot) -> Result<Array2<f64>> {
    let n = state.len();
    let mut x = Array2::zeros((n, EXACT_FEATURES));
    for i in 0..n {
        let f = exact_features(state, snapshot, i)?;
        for (k, v) in f.into_iter().enumerate() {
            x[[i, k]] = v;
        }
    }
    Ok(x)
}
