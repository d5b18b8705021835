//! State estimators that produce the per-agent feature matrix `X(t)`.

pub mod detection;
pub mod encoder;
pub mod exact;
pub mod panorama;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use detection::{
    detection_feature_matrix, detection_features, synthesize_detections, Detection, DetectionSet,
    DETECTION_FEATURES,
};
pub use encoder::{encode, encode_batch, EncoderConfig, EncoderParams};
pub use exact::{exact_feature_matrix, exact_features, EXACT_FEATURES};
pub use panorama::{degrade, render_all, render_observation, Degradation, Observation, ViewConfig};

use crate::comm_graph::GraphSnapshot;
use crate::dynamics::SwarmState;
use crate::error::Result;

/// Where a controller's features come from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PerceptionMode {
    /// Neighbor-relative velocities and positions, F = 6.
    #[default]
    Exact,
    /// Trainable encoder over synthetic panoramas.
    Panorama {
        #[serde(default)]
        view: ViewConfig,
        #[serde(default)]
        encoder: EncoderConfig,
    },
    /// Aggregated synthetic detections, F = 9.
    Detection {
        #[serde(default)]
        view: ViewConfig,
    },
}

impl PerceptionMode {
    pub fn feature_dim(&self) -> usize {
        match self {
            PerceptionMode::Exact => EXACT_FEATURES,
            PerceptionMode::Panorama { encoder, .. } => encoder.features,
            PerceptionMode::Detection { .. } => DETECTION_FEATURES,
        }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self, PerceptionMode::Panorama { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PerceptionMode::Exact => Ok(()),
            PerceptionMode::Panorama { view, encoder } => {
                view.validate()?;
                encoder.validate()?;
                if view.bins != encoder.bins {
                    return Err(crate::Error::Config(format!(
                        "perception.view.bins ({}) must equal perception.encoder.bins ({})",
                        view.bins, encoder.bins
                    )));
                }
                Ok(())
            }
            PerceptionMode::Detection { view } => view.validate(),
        }
    }
}

/// Raw sensor input recorded for one step: fixed features, or panoramas
/// that still have to pass through the encoder.
#[derive(Clone, Debug, PartialEq)]
pub enum Sensed {
    Features(Array2<f64>),
    Panoramas(Array2<f64>),
}

/// Senses the swarm for every agent. Panoramas are returned raw; callers
/// encode them with the current encoder weights.
pub fn sense(
    mode: &PerceptionMode,
    state: &SwarmState,
    snapshot: &GraphSnapshot,
    degradation: Option<(Degradation, &mut rand_chacha::ChaCha8Rng)>,
) -> Result<Sensed> {
    Ok(match mode {
        PerceptionMode::Exact => Sensed::Features(exact_feature_matrix(state, snapshot)?),
        PerceptionMode::Detection { view } => Sensed::Features(detection_feature_matrix(state, view)),
        PerceptionMode::Panorama { view, .. } => {
            let mut pano = render_all(state, view);
            if let Some((mode, rng)) = degradation {
                for mut row in pano.rows_mut() {
                    let obs = Observation {
                        panorama: row.to_vec(),
                    };
                    let out = degrade(&obs, mode, rng);
                    for (dst, v) in row.iter_mut().zip(out.panorama) {
                        *dst = v;
                    }
                }
            }
            Sensed::Panoramas(pano)
        }
    })
}
