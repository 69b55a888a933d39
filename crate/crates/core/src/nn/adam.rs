use serde::{Deserialize, Serialize};

use super::params::{Grads, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Cosine decay from `lr` to `min_lr` over this many steps; 0 keeps `lr`
    /// constant.
    pub decay_steps: u64,
    pub min_lr: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay_steps: 0,
            min_lr: 0.0,
        }
    }
}

impl AdamConfig {
    /// Learning rate used for the given 1-based step.
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.decay_steps == 0 {
            return self.lr;
        }
        let frac = (step.saturating_sub(1) as f64 / self.decay_steps as f64).min(1.0);
        self.min_lr + 0.5 * (self.lr - self.min_lr) * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}

/// Adam with bias correction. Moments are allocated lazily per tensor and
/// parameters with no gradient in a step are left untouched.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn update(&mut self, store: &mut ParamStore, grads: &Grads) -> Result<()> {
        if grads.tensors.len() != store.len() || self.first.len() != store.len() {
            return Err(Error::DimensionMismatch(format!(
                "adam: {} gradients / {} moments for {} parameters",
                grads.tensors.len(),
                self.first.len(),
                store.len()
            )));
        }
        self.step += 1;
        let AdamConfig {
            beta1, beta2, eps, ..
        } = self.config;
        let lr = self.config.lr_at(self.step);
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, param) in store.tensors_mut().iter_mut().enumerate() {
            let Some(g) = &grads.tensors[i] else { continue };
            if g.shape() != param.shape() {
                return Err(Error::DimensionMismatch(format!(
                    "adam: gradient {:?} for parameter {:?}",
                    g.shape(),
                    param.shape()
                )));
            }
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((p, &gi), mi), vi) in param.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut Grads, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}
