//! Centralized flocking expert and the one-hop position-based baseline.
//!
//! Both use the velocity-consensus term plus the gradient of the collision
//! potential `U(r_i, r_j) = 1/d² − ln(d²)` for `d = ‖r_i − r_j‖ ≤ ρ` (constant
//! beyond ρ).

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::comm_graph::GraphSnapshot;
use crate::dynamics::{saturate, SwarmState};
use crate::error::{shape_err, Error, Result};
use crate::vec2::Vec2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpertConfig {
    /// Activation radius of the collision potential (m).
    pub rho: f64,
    pub u_max: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        ExpertConfig {
            rho: 1.0,
            u_max: 30.0,
        }
    }
}

impl ExpertConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::Config("expert.rho must be positive".into()));
        }
        if !(self.u_max > 0.0) {
            return Err(Error::Config("expert.u_max must be positive".into()));
        }
        Ok(())
    }
}

/// Collision potential value, for reference and gradient checks.
pub fn potential(r_i: Vec2, r_j: Vec2, rho: f64) -> f64 {
    let d2 = (r_i - r_j).norm_sq();
    if d2.sqrt() <= rho {
        1.0 / d2 - d2.ln()
    } else {
        1.0 / (rho * rho) - (rho * rho).ln()
    }
}

/// Gradient of the collision potential with respect to `r_i`.
pub fn potential_gradient(r_i: Vec2, r_j: Vec2, rho: f64) -> Result<Vec2> {
    let r_ij = r_i - r_j;
    let d2 = r_ij.norm_sq();
    if d2 == 0.0 {
        return Err(Error::Coincident(0, 1));
    }
    if d2.sqrt() > rho {
        return Ok(Vec2::ZERO);
    }
    Ok(r_ij * (-2.0 / (d2 * d2) - 2.0 / d2))
}

fn consensus_control<'a>(
    state: &SwarmState,
    i: usize,
    others: impl Iterator<Item = &'a usize>,
    rho: f64,
) -> Result<Vec2> {
    let me = state.agents[i];
    let mut u = Vec2::ZERO;
    for &j in others {
        if j == i {
            continue;
        }
        let other = state.agents[j];
        u -= me.velocity - other.velocity;
        u -= potential_gradient(me.position, other.position, rho)
            .map_err(|_| Error::Coincident(i, j))?;
    }
    Ok(u)
}

fn to_matrix(controls: &[Vec2], u_max: f64) -> Array2<f64> {
    let mut out = Array2::zeros((controls.len(), 2));
    for (i, &u) in controls.iter().enumerate() {
        let s = saturate(u, u_max);
        out[[i, 0]] = s.x;
        out[[i, 1]] = s.y;
    }
    out
}

/// Centralized expert: every agent sees every other agent.
pub fn centralized_control(state: &SwarmState, config: &ExpertConfig) -> Result<Array2<f64>> {
    let n = state.len();
    let everyone: Vec<usize> = (0..n).collect();
    let controls = (0..n)
        .map(|i| consensus_control(state, i, everyone.iter(), config.rho))
        .collect::<Result<Vec<_>>>()?;
    Ok(to_matrix(&controls, config.u_max))
}

/// The expert's law truncated to one-hop neighborhoods `N_i(t)`.
pub fn position_based_control(
    state: &SwarmState,
    snapshot: &GraphSnapshot,
    config: &ExpertConfig,
) -> Result<Array2<f64>> {
    let n = state.len();
    if snapshot.len() != n {
        return Err(shape_err(format!(
            "graph has {} agents, swarm has {n}",
            snapshot.len()
        )));
    }
    let controls = (0..n)
        .map(|i| consensus_control(state, i, snapshot.neighbors(i).iter(), config.rho))
        .collect::<Result<Vec<_>>>()?;
    Ok(to_matrix(&controls, config.u_max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comm_graph::{build_gso, CommModel};
    use crate::dynamics::AgentState;
    use proptest::prelude::*;

    fn swarm(pv: &[((f64, f64), (f64, f64))]) -> SwarmState {
        SwarmState {
            time_index: 0,
            agents: pv
                .iter()
                .map(|&((rx, ry), (vx, vy))| AgentState {
                    position: Vec2::new(rx, ry),
                    velocity: Vec2::new(vx, vy),
                    acceleration: Vec2::ZERO,
                })
                .collect(),
        }
    }

    fn central_difference(r_i: Vec2, r_j: Vec2, rho: f64) -> Vec2 {
        let h = 1e-6;
        let dx = (potential(r_i + Vec2::new(h, 0.0), r_j, rho)
            - potential(r_i - Vec2::new(h, 0.0), r_j, rho))
            / (2.0 * h);
        let dy = (potential(r_i + Vec2::new(0.0, h), r_j, rho)
            - potential(r_i - Vec2::new(0.0, h), r_j, rho))
            / (2.0 * h);
        Vec2::new(dx, dy)
    }

    #[test]
    fn gradient_outside_radius_is_zero() {
        let g = potential_gradient(Vec2::new(2.0, 0.0), Vec2::ZERO, 1.0).unwrap();
        assert_eq!(g, Vec2::ZERO);
    }

    #[test]
    fn gradient_unit_separation() {
        let g = potential_gradient(Vec2::new(1.0, 0.0), Vec2::ZERO, 1.0).unwrap();
        assert_eq!(g, Vec2::new(-4.0, 0.0));
        let fd = central_difference(Vec2::new(1.0, 0.0), Vec2::ZERO, 1.5);
        assert!(((fd.x - -4.0) / 4.0).abs() < 1e-5 && fd.y.abs() < 1e-5);
    }

    #[test]
    fn gradient_rejects_coincident() {
        assert!(potential_gradient(Vec2::ZERO, Vec2::ZERO, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn gradient_matches_finite_differences(
            d in 0.2..3.0f64, angle in 0.0..std::f64::consts::TAU, rho in 0.5..2.0f64,
            ox in -5.0..5.0f64, oy in -5.0..5.0f64,
        ) {
            prop_assume!((d - rho).abs() > 1e-3);
            let r_j = Vec2::new(ox, oy);
            let r_i = r_j + Vec2::new(d, 0.0).rotate(angle);
            let g = potential_gradient(r_i, r_j, rho).unwrap();
            let fd = central_difference(r_i, r_j, rho);
            let scale = g.norm().max(1e-3);
            prop_assert!((g - fd).norm() / scale < 1e-5, "g={g:?} fd={fd:?}");
        }

        #[test]
        fn gradient_is_antisymmetric(
            ax in -3.0..3.0f64, ay in -3.0..3.0f64, bx in -3.0..3.0f64, by in -3.0..3.0f64,
        ) {
            let a = Vec2::new(ax, ay);
            let b = Vec2::new(bx, by);
            prop_assume!((a - b).norm() > 1e-3);
            let gab = potential_gradient(a, b, 1.0).unwrap();
            let gba = potential_gradient(b, a, 1.0).unwrap();
            prop_assert_eq!(gab, -gba);
        }
    }

    #[test]
    fn consensus_is_fixed_point() {
        let s = swarm(&[((0.0, 0.0), (1.0, 2.0)), ((3.0, 0.0), (1.0, 2.0)), ((0.0, 3.0), (1.0, 2.0))]);
        let u = centralized_control(&s, &ExpertConfig::default()).unwrap();
        assert!(u.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn two_agent_consensus() {
        let s = swarm(&[((0.0, 0.0), (1.0, 0.0)), ((5.0, 0.0), (0.0, 0.0))]);
        let u = centralized_control(&s, &ExpertConfig::default()).unwrap();
        assert_eq!(u.row(0).to_vec(), vec![-1.0, 0.0]);
        assert_eq!(u.row(1).to_vec(), vec![1.0, 0.0]);
    }

    #[test]
    fn controls_are_saturated() {
        let s = swarm(&[((0.0, 0.0), (100.0, 0.0)), ((5.0, 0.0), (0.0, 0.0))]);
        let u = centralized_control(&s, &ExpertConfig::default()).unwrap();
        assert_eq!(u.row(0).to_vec(), vec![-30.0, 0.0]);
    }

    #[test]
    fn position_based_complete_graph_matches_expert() {
        let s = swarm(&[((0.0, 0.0), (1.0, 0.0)), ((0.5, 0.0), (0.0, 1.0)), ((0.0, 0.7), (-1.0, 0.5))]);
        let g = build_gso(&s.positions(), &CommModel::Disk { radius: 10.0 }, 0).unwrap();
        let cfg = ExpertConfig::default();
        assert_eq!(position_based_control(&s, &g, &cfg).unwrap(), centralized_control(&s, &cfg).unwrap());
    }

    #[test]
    fn position_based_empty_graph_is_zero() {
        let s = swarm(&[((0.0, 0.0), (1.0, 0.0)), ((0.5, 0.0), (0.0, 1.0))]);
        let g = GraphSnapshot::empty(0, 2);
        let u = position_based_control(&s, &g, &ExpertConfig::default()).unwrap();
        assert!(u.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn position_based_path_differs_at_ends() {
        // Path 0 - 1 - 2 with spacing 1.2 (> rho, so only consensus acts).
        let s = swarm(&[((0.0, 0.0), (1.0, 0.0)), ((1.2, 0.0), (0.0, 0.0)), ((2.4, 0.0), (0.0, 2.0))]);
        let g = build_gso(&s.positions(), &CommModel::Disk { radius: 1.5 }, 0).unwrap();
        let cfg = ExpertConfig::default();
        let local = position_based_control(&s, &g, &cfg).unwrap();
        let global = centralized_control(&s, &cfg).unwrap();
        // End 0: local -(v0 - v1) = (-1, 0); global adds -(v0 - v2) = (-1, 2).
        assert_eq!(local.row(0).to_vec(), vec![-1.0, 0.0]);
        assert_eq!(global.row(0).to_vec(), vec![-2.0, 2.0]);
        // End 2: local -(v2 - v1) = (0, -2); global adds -(v2 - v0) = (1, -2).
        assert_eq!(local.row(2).to_vec(), vec![0.0, -2.0]);
        assert_eq!(global.row(2).to_vec(), vec![1.0, -4.0]);
        // Middle agent sees everyone in both cases.
        assert_eq!(local.row(1), global.row(1));
    }

    #[test]
    fn consensus_term_preserves_mean_velocity() {
        use crate::dynamics::{step, SimConfig};
        // Spread out beyond rho so only the consensus term acts, and keep
        // velocities small enough to stay unsaturated.
        let s = swarm(&[
            ((0.0, 0.0), (0.3, -0.1)),
            ((3.0, 0.0), (-0.2, 0.4)),
            ((0.0, 3.0), (0.1, 0.1)),
            ((3.0, 3.0), (-0.4, 0.2)),
        ]);
        let cfg = ExpertConfig::default();
        let u = centralized_control(&s, &cfg).unwrap();
        assert!(u.iter().all(|x| x.abs() < cfg.u_max));
        let next = step(&s, u.view(), &SimConfig::default()).unwrap();
        let drift = next.mean_velocity() - s.mean_velocity();
        assert!(drift.norm() < 1e-12);
    }
}
