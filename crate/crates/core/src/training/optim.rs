//! Adam and the triangular cyclic learning rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Parameterized, Tensor};

/// Triangular schedule: the rate climbs linearly from `base_lr` to `max_lr`
/// over `step_size` steps, falls back over the next `step_size`, and repeats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CyclicSchedule {
    pub base_lr: f64,
    pub max_lr: f64,
    pub step_size: usize,
}

impl CyclicSchedule {
    pub fn lr_at(&self, step: usize) -> f64 {
        lr_at(step, self.base_lr, self.max_lr, self.step_size)
    }
}

/// Rate at optimizer step `step` (0-based). Written as a convex combination
/// so the cycle start and the peak return `base` and `max` exactly.
pub fn lr_at(step: usize, base: f64, max: f64, step_size: usize) -> f64 {
    let s = step_size.max(1);
    let pos = step % (2 * s);
    let t = (s - pos.abs_diff(s)) as f64 / s as f64;
    (1.0 - t) * base + t * max
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("train.adam.{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::config("train.adam.eps must be positive"));
        }
        Ok(())
    }
}

/// First and second moments per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamState {
    pub fn new<S: Parameterized + ?Sized>(store: &S) -> Self {
        let m: Vec<Tensor> = store.params().iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self { v: m.clone(), m, t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update from the accumulated gradients. A
/// non-finite gradient aborts before any parameter changes.
pub fn adam_step<S: Parameterized + ?Sized>(
    store: &mut S,
    state: &mut AdamState,
    lr: f64,
    config: &AdamConfig,
) -> Result<()> {
    let mut params = store.params_mut();
    if params.len() != state.m.len() {
        return Err(Error::config(format!(
            "optimizer state tracks {} tensors, model has {}",
            state.m.len(),
            params.len()
        )));
    }
    if let Some(p) = params.iter().find(|p| !p.grad.is_finite()) {
        return Err(Error::NonFinite(format!("gradient of `{}`", p.name)));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let grad = p.grad.data();
        let value = p.value.data_mut();
        for (((x, g), m), v) in value.iter_mut().zip(grad).zip(m.data_mut()).zip(v.data_mut()) {
            *m = config.beta1 * *m + (1.0 - config.beta1) * g;
            *v = config.beta2 * *v + (1.0 - config.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *x -= lr * m_hat / (v_hat.sqrt() + config.eps);
        }
    }
    Ok(())
}
