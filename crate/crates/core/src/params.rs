use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Array2<f64>,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Array2<f64>) -> Self {
        Param {
            name: name.into(),
            value,
        }
    }
}

/// Ordered collection of named parameter matrices.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub params: Vec<Param>,
}

impl ParamSet {
    pub fn new(params: Vec<Param>) -> Self {
        ParamSet { params }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    /// Clones the named matrix, checking its shape.
    pub fn take(&self, name: &str, shape: (usize, usize)) -> Result<Array2<f64>> {
        let v = self.get(name).ok_or_else(|| Error::Format {
            kind: "parameter set",
            message: format!("missing parameter {name}"),
        })?;
        if v.dim() != shape {
            return Err(Error::Format {
                kind: "parameter set",
                message: format!("{name} has shape {:?}, expected {shape:?}", v.dim()),
            });
        }
        Ok(v.clone())
    }

    pub fn extend(&mut self, other: ParamSet) {
        self.params.extend(other.params);
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.iter().all(|v| v.is_finite()))
    }

    pub fn norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.value.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> ParamSet {
        ParamSet::new(
            self.params
                .iter()
                .map(|p| Param::new(p.name.clone(), Array2::zeros(p.value.raw_dim())))
                .collect(),
        )
    }

    pub fn add_assign(&mut self, other: &ParamSet) {
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            debug_assert_eq!(a.name, b.name);
            a.value += &b.value;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for p in &mut self.params {
            p.value *= k;
        }
    }
}

/// Uniform initialization in `[-1/√fan_in, 1/√fan_in]`.
pub fn uniform_init(rng: &mut impl Rng, rows: usize, cols: usize, fan_in: usize) -> Array2<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}
