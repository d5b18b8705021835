//! Synthetic panoramic observations.
//!
//! Each agent sees a world-frame ring of `bins` azimuth cells. A neighbor at
//! distance `d` paints intensity `min(1, ρ_vis/d)` over the cells its disc of
//! radius `ρ_vis` subtends, so apparent size and brightness both encode range.

use std::f64::consts::TAU;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::SwarmState;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ViewConfig {
    pub bins: usize,
    /// Apparent-size scale (m).
    pub rho_vis: f64,
    pub max_range: f64,
}

impl Default for ViewConfig {
    fn default() -> Self {
        ViewConfig {
            bins: 64,
            rho_vis: 0.5,
            max_range: 5.0,
        }
    }
}

impl ViewConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 1 {
            return Err(Error::Config("view.bins must be positive".into()));
        }
        if !(self.rho_vis > 0.0) {
            return Err(Error::Config("view.rho_vis must be positive".into()));
        }
        if !(self.max_range > 0.0) {
            return Err(Error::Config("view.max_range must be positive".into()));
        }
        Ok(())
    }

    pub fn bin_width(&self) -> f64 {
        TAU / self.bins as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub panorama: Vec<f64>,
}

impl Observation {
    pub fn zeros(bins: usize) -> Self {
        Observation {
            panorama: vec![0.0; bins],
        }
    }
}

/// Renders the panorama seen by agent `i`.
pub fn render_observation(state: &SwarmState, i: usize, view: &ViewConfig) -> Observation {
    let w = view.bins;
    let delta = view.bin_width();
    let mut panorama = vec![0.0; w];
    let me = state.agents[i].position;
    for (j, other) in state.agents.iter().enumerate() {
        if j == i {
            continue;
        }
        let offset = other.position - me;
        let d = offset.norm();
        if d == 0.0 || d > view.max_range {
            continue;
        }
        let intensity = (view.rho_vis / d).min(1.0);
        let half = (view.rho_vis / d).atan();
        let bearing = offset.bearing();
        let first = ((bearing - half) / delta).floor() as i64;
        let last = ((bearing + half) / delta).ceil() as i64 - 1;
        for b in first..=last {
            let idx = b.rem_euclid(w as i64) as usize;
            if panorama[idx] < intensity {
                panorama[idx] = intensity;
            }
        }
    }
    Observation { panorama }
}

/// Panoramas for every agent, one per row.
pub fn render_all(state: &SwarmState, view: &ViewConfig) -> Array2<f64> {
    let n = state.len();
    let mut out = Array2::zeros((n, view.bins));
    for i in 0..n {
        let obs = render_observation(state, i, view);
        for (b, v) in obs.panorama.into_iter().enumerate() {
            out[[i, b]] = v;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Degradation {
    /// Additive white noise with standard deviation `sigma`, clipped to [0, 1].
    Gaussian { sigma: f64 },
    /// Circular moving average over `width` bins.
    Blur { width: usize },
}

impl Degradation {
    /// Noise level equivalent to variance 100 on a 0-255 intensity scale.
    pub const HIGH_NOISE_SIGMA: f64 = 10.0 / 255.0;
}

pub fn degrade(obs: &Observation, mode: Degradation, rng: &mut impl Rng) -> Observation {
    let w = obs.panorama.len();
    let panorama = match mode {
        Degradation::Gaussian { sigma } => {
            if sigma <= 0.0 {
                return obs.clone();
            }
            let normal = Normal::new(0.0, sigma).expect("finite sigma");
            obs.panorama
                .iter()
                .map(|&v| (v + normal.sample(rng)).clamp(0.0, 1.0))
                .collect()
        }
        Degradation::Blur { width } => {
            if width <= 1 || w == 0 {
                return obs.clone();
            }
            let lo = width / 2;
            let scale = 1.0 / width as f64;
            (0..w)
                .map(|b| {
                    let mut acc = 0.0;
                    for o in 0..width {
                        acc += obs.panorama[(b + w * width + o - lo) % w];
                    }
                    acc * scale
                })
                .collect()
        }
    };
    Observation { panorama }
}
