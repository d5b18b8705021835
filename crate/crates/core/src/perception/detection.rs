//! Detection-based features: nearest, top-three and all-detection summaries
//! weighted by confident area `s = w·h·c`.

use std::f64::consts::TAU;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dynamics::SwarmState;
use crate::perception::panorama::ViewConfig;

pub const DETECTION_FEATURES: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub confidence: f64,
}

impl Detection {
    pub fn confident_area(&self) -> f64 {
        self.w * self.h * self.confidence
    }
}

pub type DetectionSet = Vec<Detection>;

/// `(Σ x s / Σ s, Σ y s / Σ s)`, falling back to the plain mean when every
/// area is zero.
fn weighted_centroid(items: &[(f64, f64, f64)]) -> (f64, f64) {
    let total: f64 = items.iter().map(|t| t.2).sum();
    if total > 0.0 {
        let x = items.iter().map(|t| t.0 * t.2).sum::<f64>() / total;
        let y = items.iter().map(|t| t.1 * t.2).sum::<f64>() / total;
        (x, y)
    } else {
        let n = items.len() as f64;
        (
            items.iter().map(|t| t.0).sum::<f64>() / n,
            items.iter().map(|t| t.1).sum::<f64>() / n,
        )
    }
}

pub fn detection_features(dets: &[Detection]) -> [f64; DETECTION_FEATURES] {
    if dets.is_empty() {
        return [0.0; DETECTION_FEATURES];
    }
    let mut items: Vec<(f64, f64, f64)> = dets.iter().map(|d| (d.x, d.y, d.confident_area())).collect();
    // Stable: equal areas keep input order.
    items.sort_by(|a, b| b.2.total_cmp(&a.2));

    let top = &items[..items.len().min(3)];
    let top_divisor = if items.len() >= 3 { 3.0 } else { top.len() as f64 };
    let (tx, ty) = weighted_centroid(top);
    let (ax, ay) = weighted_centroid(&items);
    [
        items[0].0,
        items[0].1,
        items[0].2,
        tx,
        ty,
        top.iter().map(|t| t.2).sum::<f64>() / top_divisor,
        ax,
        ay,
        items.iter().map(|t| t.2).sum::<f64>() / items.len() as f64,
    ]
}

/// Boxes for every agent agent `i` can see: center at the bearing (as a
/// fraction of the full turn), vertical center 0.5, width and height
/// `ρ_vis/d`, confidence 1.
pub fn synthesize_detections(state: &SwarmState, i: usize, camera: &ViewConfig) -> DetectionSet {
    let me = state.agents[i].position;
    state
        .agents
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .filter_map(|(_, other)| {
            let offset = other.position - me;
            let d = offset.norm();
            if d == 0.0 || d > camera.max_range {
                return None;
            }
            let size = camera.rho_vis / d;
            Some(Detection {
                x: offset.bearing() / TAU,
                y: 0.5,
                w: size,
                h: size,
                confidence: 1.0,
            })
        })
        .collect()
}

pub fn detection_feature_matrix(state: &SwarmState, camera: &ViewConfig) -> Array2<f64> {
    let n = state.len();
    let mut x = Array2::zeros((n, DETECTION_FEATURES));
    for i in 0..n {
        let f = detection_features(&synthesize_detections(state, i, camera));
        for (k, v) in f.into_iter().enumerate() {
            x[[i, k]] = v;
        }
    }
    x
}
