//! Delayed-aggregation graph neural network: a shared per-agent perceptron
//! over the aggregation sequence.

use ndarray::Array2;
use rand::Rng;

use crate::autodiff::{Activation, Backend, Eager};
use crate::error::{shape_err, Result};
use crate::params::{uniform_init, Param, ParamSet};

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    /// `in × out`.
    pub weight: Array2<f64>,
    /// `1 × out`.
    pub bias: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DagnnParams {
    pub layers: Vec<DenseLayer>,
    pub hidden_activation: Activation,
}

fn dims(input: usize, hidden: &[usize], output: usize) -> Vec<(usize, usize)> {
    let mut sizes = vec![input];
    sizes.extend_from_slice(hidden);
    sizes.push(output);
    sizes.windows(2).map(|w| (w[0], w[1])).collect()
}

impl DagnnParams {
    pub fn init(
        input: usize,
        hidden: &[usize],
        output: usize,
        hidden_activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = dims(input, hidden, output)
            .into_iter()
            .map(|(i, o)| DenseLayer {
                weight: uniform_init(rng, i, o, i),
                bias: uniform_init(rng, 1, o, i),
            })
            .collect();
        DagnnParams {
            layers,
            hidden_activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weight.nrows())
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.ncols())
    }

    pub fn to_param_set(&self) -> ParamSet {
        let mut params = Vec::with_capacity(2 * self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            params.push(Param::new(format!("dagnn.layer{l}.weight"), layer.weight.clone()));
            params.push(Param::new(format!("dagnn.layer{l}.bias"), layer.bias.clone()));
        }
        ParamSet::new(params)
    }

    pub fn from_param_set(
        input: usize,
        hidden: &[usize],
        output: usize,
        hidden_activation: Activation,
        set: &ParamSet,
    ) -> Result<Self> {
        let layers = dims(input, hidden, output)
            .into_iter()
            .enumerate()
            .map(|(l, (i, o))| {
                Ok(DenseLayer {
                    weight: set.take(&format!("dagnn.layer{l}.weight"), (i, o))?,
                    bias: set.take(&format!("dagnn.layer{l}.bias"), (1, o))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(DagnnParams {
            layers,
            hidden_activation,
        })
    }
}

/// Row-wise perceptron. `weights` alternates weight and bias per layer; the
/// last layer is linear.
pub fn mlp<B: Backend>(b: &mut B, weights: &[B::M], hidden_activation: Activation, z: &B::M) -> B::M {
    let layers = weights.len() / 2;
    let mut h = z.clone();
    for l in 0..layers {
        let lin = b.matmul(&h, &weights[2 * l]);
        let lin = b.add_bias(&lin, &weights[2 * l + 1]);
        h = if l + 1 < layers {
            b.activate(&lin, hidden_activation)
        } else {
            lin
        };
    }
    h
}

/// Control for one agent from its row of the aggregation sequence.
pub fn dagnn_forward(z_i: &[f64], params: &DagnnParams) -> Result<Vec<f64>> {
    if z_i.len() != params.input_dim() {
        return Err(shape_err(format!(
            "input has {} entries, network expects {}",
            z_i.len(),
            params.input_dim()
        )));
    }
    let row = Array2::from_shape_vec((1, z_i.len()), z_i.to_vec()).map_err(|e| shape_err(e.to_string()))?;
    Ok(dagnn_forward_batch(&row, params).row(0).to_vec())
}

/// Applies the shared network to every row.
pub fn dagnn_forward_batch(z: &Array2<f64>, params: &DagnnParams) -> Array2<f64> {
    let weights: Vec<Array2<f64>> = params.to_param_set().params.into_iter().map(|p| p.value).collect();
    mlp(&mut Eager, &weights, params.hidden_activation, z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_zero_output() {
        let mut p = DagnnParams::init(8, &[5], 2, Activation::Relu, &mut ChaCha8Rng::seed_from_u64(0));
        for l in &mut p.layers {
            l.weight.fill(0.0);
            l.bias.fill(0.0);
        }
        assert_eq!(dagnn_forward(&[1.0; 8], &p).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_padding_selects_leading_entries() {
        let mut weight = Array2::zeros((6, 2));
        weight[[0, 0]] = 1.0;
        weight[[1, 1]] = 1.0;
        let p = DagnnParams {
            layers: vec![DenseLayer {
                weight,
                bias: Array2::zeros((1, 2)),
            }],
            hidden_activation: Activation::Relu,
        };
        let z = [0.7, -1.3, 4.0, 5.0, 6.0, 7.0];
        assert_eq!(dagnn_forward(&z, &p).unwrap(), vec![0.7, -1.3]);
    }

    #[test]
    fn rejects_wrong_input_length() {
        let p = DagnnParams::init(8, &[5], 2, Activation::Relu, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(dagnn_forward(&[0.0; 7], &p).is_err());
    }

    #[test]
    fn param_set_round_trip() {
        let p = DagnnParams::init(4, &[3, 3], 2, Activation::Tanh, &mut ChaCha8Rng::seed_from_u64(5));
        let q = DagnnParams::from_param_set(4, &[3, 3], 2, Activation::Tanh, &p.to_param_set()).unwrap();
        assert_eq!(p, q);
        assert!(DagnnParams::from_param_set(4, &[3], 2, Activation::Tanh, &p.to_param_set()).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = DagnnParams::init(6, &[5, 4], 2, Activation::Tanh, &mut rng);
        let z = Array2::from_shape_fn((3, 6), |_| rng.random_range(-1.0..1.0));
        let target = Array2::from_shape_fn((3, 2), |_| rng.random_range(-1.0..1.0));
        let set = p.to_param_set();
        let loss_of = |set: &ParamSet| {
            let q = DagnnParams::from_param_set(6, &[5, 4], 2, Activation::Tanh, set).unwrap();
            let out = dagnn_forward_batch(&z, &q);
            out.iter().zip(target.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>() / 3.0
        };
        let mut tape = Tape::new();
        let vars: Vec<_> = set.params.iter().map(|p| tape.leaf(p.value.clone())).collect();
        let zv = tape.constant(z.clone());
        let out = mlp(&mut tape, &vars, Activation::Tanh, &zv);
        let loss = tape.l1_loss(out, &target);
        let grads = tape.backward(loss);
        let h = 1e-6;
        for (k, param) in set.params.iter().enumerate() {
            let g = grads.get_or_zeros(vars[k], param.value.dim());
            for idx in 0..param.value.len() {
                let bump = |d: f64| {
                    let mut s = set.clone();
                    s.params[k].value.as_slice_mut().unwrap()[idx] += d;
                    loss_of(&s)
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                let a = g.as_slice().unwrap()[idx];
                assert!((a - fd).abs() <= 1e-7 + 1e-4 * a.abs().max(fd.abs()), "{} [{idx}]: {a} vs {fd}", param.name);
            }
        }
    }
}
