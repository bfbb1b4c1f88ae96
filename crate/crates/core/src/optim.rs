//! Bias-corrected ADAM.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathcore::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learn_rate: f64,
    /// Gradient decay.
    pub beta1: f64,
    /// Squared gradient decay.
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learn_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learn_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid ADAM configuration {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vector,
    pub v: Vector,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: Vector::zeros(len),
            v: Vector::zeros(len),
            t: 0,
        }
    }
}

/// Advances `state` by one step and returns the parameter update `Δθ`.
pub fn adam_step(state: &mut AdamState, grad: &[f64], cfg: &AdamConfig) -> Result<Vector> {
    if grad.len() != state.m.len() {
        return Err(Error::shape("adam_step", state.m.len(), grad.len()));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let update = grad
        .iter()
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
        .map(|(&g, (m, v))| {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            -cfg.learn_rate * m_hat / (v_hat.sqrt() + cfg.epsilon)
        })
        .collect();
    Ok(update)
}
