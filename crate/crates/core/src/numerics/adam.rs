use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamStore};
use super::tensor::Tensor;
use super::NumericsError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 2.5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-5,
        }
    }
}

/// Learning rate `base * (1 - consumed / max_steps)`, floored at 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearDecay {
    pub base: f64,
    pub max_steps: u64,
}

impl LinearDecay {
    pub fn progress(&self, consumed: u64) -> f64 {
        if self.max_steps == 0 {
            return 1.0;
        }
        (consumed as f64 / self.max_steps as f64).min(1.0)
    }

    pub fn rate(&self, consumed: u64) -> f64 {
        self.base * (1.0 - self.progress(consumed))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    /// Number of steps taken so far.
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Adam {
        let zeros = || store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Adam {
            config,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One bias-corrected Adam step at learning rate `lr`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) -> Result<(), NumericsError> {
        if self.m.len() != store.len() {
            return Err(NumericsError::Shape(format!(
                "optimizer tracks {} tensors, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, epsilon, .. } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (((p, g), m), v) in store.iter_mut().zip(grads.iter()).zip(&mut self.m).zip(&mut self.v) {
            let pd = p.value.data_mut();
            for (((x, &g), m), v) in pd.iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *x -= lr * mhat / (vhat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
