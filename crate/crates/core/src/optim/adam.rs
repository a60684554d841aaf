//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig { learning_rate, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self::with_learning_rate(1e-3)
    }
}

/// Per-parameter first/second moments plus the shared step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let m = params.tensors().iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
        let v = params.tensors().iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
        AdamState { config, step: 0, m, v }
    }

    /// Rebuild from serialized parts (checkpoint restore).
    pub fn from_parts(config: AdamConfig, step: u64, m: Vec<Tensor>, v: Vec<Tensor>) -> Self {
        AdamState { config, step, m, v }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    /// One bias-corrected update:
    /// `m <- b1*m + (1-b1)*g`, `v <- b2*v + (1-b2)*g^2`,
    /// `theta <- theta - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) -> Result<()> {
        if grads.len() != self.m.len() || params.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                context: "AdamState::step",
                left: vec![params.len(), grads.len()],
                right: vec![self.m.len()],
            });
        }
        for (i, g) in grads.iter().enumerate() {
            if !g.same_shape(params.get(i)) {
                return Err(Error::ShapeMismatch {
                    context: "AdamState::step",
                    left: g.shape().to_vec(),
                    right: params.get(i).shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (i, g) in grads.iter().enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = params.get_mut(i).data_mut();
            for ((mi, vi), (pi, gi)) in m.iter_mut().zip(v.iter_mut()).zip(p.iter_mut().zip(g.data())) {
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
            }
        }
        Ok(())
    }
}
