use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// A named trainable tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
}

/// Owns every parameter of a model. Read-only snapshots are shared with
/// rollout workers; the optimizer holds the only mutable copy.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(self.params.iter().all(|p| p.name != name), "duplicate parameter {name}");
        self.params.push(Parameter { name, value });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total number of scalars.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Scalars in parameters whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| p.value.numel())
            .sum()
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients {
            grads: self.params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
        }
    }
}

/// One gradient tensor per parameter, same order and shapes as the store.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.grads.iter()
    }

    pub fn zero(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.grads {
            g.scale_assign(s);
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales so the global L2 norm is at most `max_norm`; returns the norm
    /// before clipping.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.l2_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flat_map(|g| g.data()).all(|v| v.is_finite())
    }
}

/// Weight initialisation schemes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Init {
    /// `N(0, 2 / fan_in)`.
    HeNormal,
    /// `N(0, std^2)`.
    Normal { std: f64 },
    Zeros,
    Ones,
    Constant { value: f64 },
}

impl Init {
    pub fn tensor<R: Rng + ?Sized>(self, shape: &[usize], rng: &mut R) -> Tensor {
        match self {
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::filled(shape, 1.0),
            Init::Constant { value } => Tensor::filled(shape, value),
            Init::HeNormal => {
                let fan_in = shape.first().copied().unwrap_or(1).max(1);
                Init::Normal {
                    std: (2.0 / fan_in as f64).sqrt(),
                }
                .tensor(shape, rng)
            }
            Init::Normal { std } => {
                let dist = Normal::new(0.0, std).expect("finite std");
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| dist.sample(rng)).collect();
                Tensor::new(shape.to_vec(), data).expect("shape")
            }
        }
    }
}
