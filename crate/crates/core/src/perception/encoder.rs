//! Shared observation encoder.
//!
//! Two circular convolution stages over the azimuth axis with `tanh`, average
//! pooling that keeps coarse bearing resolution, and one linear stage down to
//! `features` outputs. Every agent runs the same weights on its own panorama.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Backend, ConvSpec, PoolSpec};
use crate::error::{shape_err, Error, Result};
use crate::params::{uniform_init, Param, ParamSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub bins: usize,
    pub channels: [usize; 2],
    pub kernel: usize,
    pub pool: usize,
    pub features: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            bins: 64,
            channels: [8, 8],
            kernel: 5,
            pool: 8,
            features: 24,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins == 0 || self.kernel == 0 || self.features == 0 {
            return Err(Error::Config("encoder sizes must be positive".into()));
        }
        if self.channels.iter().any(|&c| c == 0) {
            return Err(Error::Config("encoder.channels must be positive".into()));
        }
        if self.pool == 0 || self.bins % self.pool != 0 {
            return Err(Error::Config(format!(
                "encoder.pool ({}) must divide encoder.bins ({})",
                self.pool, self.bins
            )));
        }
        Ok(())
    }

    fn conv(&self, stage: usize) -> ConvSpec {
        ConvSpec {
            in_channels: if stage == 0 { 1 } else { self.channels[0] },
            out_channels: self.channels[stage],
            width: self.bins,
            kernel: self.kernel,
        }
    }

    fn pool_spec(&self) -> PoolSpec {
        PoolSpec {
            channels: self.channels[1],
            width: self.bins,
            window: self.pool,
        }
    }

    fn pooled_width(&self) -> usize {
        self.channels[1] * self.bins / self.pool
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub conv1_w: Array2<f64>,
    pub conv1_b: Array2<f64>,
    pub conv2_w: Array2<f64>,
    pub conv2_b: Array2<f64>,
    pub fc_w: Array2<f64>,
    pub fc_b: Array2<f64>,
}

impl EncoderParams {
    pub fn init(config: EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let k = config.kernel;
        let [c1, c2] = config.channels;
        let fc_in = config.pooled_width();
        Ok(EncoderParams {
            conv1_w: uniform_init(rng, c1, k, k),
            conv1_b: uniform_init(rng, 1, c1, k),
            conv2_w: uniform_init(rng, c2, c1 * k, c1 * k),
            conv2_b: uniform_init(rng, 1, c2, c1 * k),
            fc_w: uniform_init(rng, fc_in, config.features, fc_in),
            fc_b: uniform_init(rng, 1, config.features, fc_in),
            config,
        })
    }

    pub fn to_param_set(&self) -> ParamSet {
        ParamSet::new(vec![
            Param::new("encoder.conv1.weight", self.conv1_w.clone()),
            Param::new("encoder.conv1.bias", self.conv1_b.clone()),
            Param::new("encoder.conv2.weight", self.conv2_w.clone()),
            Param::new("encoder.conv2.bias", self.conv2_b.clone()),
            Param::new("encoder.fc.weight", self.fc_w.clone()),
            Param::new("encoder.fc.bias", self.fc_b.clone()),
        ])
    }

    pub fn from_param_set(config: EncoderConfig, set: &ParamSet) -> Result<Self> {
        config.validate()?;
        let k = config.kernel;
        let [c1, c2] = config.channels;
        let fc_in = config.pooled_width();
        Ok(EncoderParams {
            conv1_w: set.take("encoder.conv1.weight", (c1, k))?,
            conv1_b: set.take("encoder.conv1.bias", (1, c1))?,
            conv2_w: set.take("encoder.conv2.weight", (c2, c1 * k))?,
            conv2_b: set.take("encoder.conv2.bias", (1, c2))?,
            fc_w: set.take("encoder.fc.weight", (fc_in, config.features))?,
            fc_b: set.take("encoder.fc.bias", (1, config.features))?,
            config,
        })
    }

    pub fn load<B: Backend>(&self, b: &mut B) -> LoadedEncoder<B::M> {
        LoadedEncoder {
            config: self.config.clone(),
            weights: [
                b.constant(self.conv1_w.clone()),
                b.constant(self.conv1_b.clone()),
                b.constant(self.conv2_w.clone()),
                b.constant(self.conv2_b.clone()),
                b.constant(self.fc_w.clone()),
                b.constant(self.fc_b.clone()),
            ],
        }
    }
}

/// Encoder weights resident in a backend, in `to_param_set` order.
#[derive(Clone)]
pub struct LoadedEncoder<M> {
    pub config: EncoderConfig,
    pub weights: [M; 6],
}

impl<M: Clone> LoadedEncoder<M> {
    /// Encodes a batch of panoramas (one row per agent) into an `N×F` matrix.
    pub fn forward<B: Backend<M = M>>(&self, b: &mut B, panoramas: &M) -> M {
        let [w1, b1, w2, b2, wf, bf] = &self.weights;
        let h1 = b.conv1d(panoramas, w1, b1, self.config.conv(0));
        let h1 = b.activate(&h1, Activation::Tanh);
        let h2 = b.conv1d(&h1, w2, b2, self.config.conv(1));
        let h2 = b.activate(&h2, Activation::Tanh);
        let pooled = b.avg_pool(&h2, self.config.pool_spec());
        let out = b.matmul(&pooled, wf);
        b.add_bias(&out, bf)
    }
}

/// Encodes a single observation.
pub fn encode(panorama: &[f64], params: &EncoderParams) -> Result<Vec<f64>> {
    if panorama.len() != params.config.bins {
        return Err(shape_err(format!(
            "panorama has {} bins, encoder expects {}",
            panorama.len(),
            params.config.bins
        )));
    }
    let batch = Array2::from_shape_vec((1, panorama.len()), panorama.to_vec())
        .map_err(|e| shape_err(e.to_string()))?;
    Ok(encode_batch(&batch, params)?.row(0).to_vec())
}

pub fn encode_batch(panoramas: &Array2<f64>, params: &EncoderParams) -> Result<Array2<f64>> {
    if panoramas.ncols() != params.config.bins {
        return Err(shape_err(format!(
            "panoramas have {} bins, encoder expects {}",
            panoramas.ncols(),
            params.config.bins
        )));
    }
    let mut eager = crate::autodiff::Eager;
    let loaded = params.load(&mut eager);
    Ok(loaded.forward(&mut eager, panoramas))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Tape, Var};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> EncoderConfig {
        EncoderConfig {
            bins: 16,
            channels: [3, 2],
            kernel: 3,
            pool: 4,
            features: 4,
        }
    }

    #[test]
    fn zero_input_zero_bias_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = EncoderParams::init(small(), &mut rng).unwrap();
        p.conv1_b.fill(0.0);
        p.conv2_b.fill(0.0);
        p.fc_b.fill(0.0);
        let out = encode(&[0.0; 16], &p).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_and_shared() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = EncoderParams::init(small(), &mut rng).unwrap();
        let obs: Vec<f64> = (0..16).map(|i| ((i * 7) % 5) as f64 / 5.0).collect();
        assert_eq!(encode(&obs, &p).unwrap(), encode(&obs, &p).unwrap());
        let mut batch = Array2::zeros((2, 16));
        for b in 0..16 {
            batch[[0, b]] = obs[b];
            batch[[1, b]] = obs[b];
        }
        let out = encode_batch(&batch, &p).unwrap();
        assert_eq!(out.row(0), out.row(1));
    }

    #[test]
    fn rejects_wrong_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = EncoderParams::init(small(), &mut rng).unwrap();
        assert!(encode(&[0.0; 15], &p).is_err());
    }

    #[test]
    fn pool_must_divide_bins() {
        let cfg = EncoderConfig {
            pool: 5,
            ..small()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn weight_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = EncoderParams::init(small(), &mut rng).unwrap();
        let x = Array2::from_shape_fn((2, 16), |_| rng.random_range(0.0..1.0));
        let target = Array2::from_shape_fn((2, 4), |_| rng.random_range(-1.0..1.0));
        let loss_of = |p: &EncoderParams| -> f64 {
            let out = encode_batch(&x, p).unwrap();
            out.iter().zip(target.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0
        };
        let mut tape = Tape::new();
        let loaded = LoadedEncoder {
            config: p.config.clone(),
            weights: [
                tape.leaf(p.conv1_w.clone()),
                tape.leaf(p.conv1_b.clone()),
                tape.leaf(p.conv2_w.clone()),
                tape.leaf(p.conv2_b.clone()),
                tape.leaf(p.fc_w.clone()),
                tape.leaf(p.fc_b.clone()),
            ],
        };
        let xv = tape.constant(x.clone());
        let out = loaded.forward(&mut tape, &xv);
        let loss = tape.l1_loss(out, &target);
        assert!((tape.scalar(loss) - loss_of(&p)).abs() < 1e-14);
        let grads = tape.backward(loss);
        let set = p.to_param_set();
        let h = 1e-6;
        for (k, param) in set.params.iter().enumerate() {
            let var: Var = loaded.weights[k];
            let g = grads.get_or_zeros(var, param.value.dim());
            for idx in 0..param.value.len() {
                let bump = |d: f64| {
                    let mut s = set.clone();
                    s.params[k].value.as_slice_mut().unwrap()[idx] += d;
                    loss_of(&EncoderParams::from_param_set(p.config.clone(), &s).unwrap())
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                let a = g.as_slice().unwrap()[idx];
                assert!((a - fd).abs() <= 1e-7 + 1e-4 * a.abs().max(fd.abs()), "{} [{idx}]: {a} vs {fd}", param.name);
            }
        }
    }
}
