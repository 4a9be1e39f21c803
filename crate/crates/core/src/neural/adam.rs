use serde::{Deserialize, Serialize};

use super::Mlp;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm bound; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: Some(1.0),
        }
    }
}

/// Bias-corrected Adam with optional global-norm clipping.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &Mlp) -> Result<Self> {
        if config.learning_rate <= 0.0 || config.clip_norm.is_some_and(|c| c <= 0.0) {
            return Err(Error::InvalidConfig(
                "learning rate and clip norm must be positive".into(),
            ));
        }
        let n = params.num_params();
        Ok(Self {
            config,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update. Returns the gradient norm before clipping.
    pub fn step(&mut self, params: &mut Mlp, grads: &Mlp) -> Result<f64> {
        if grads.num_params() != self.m.len() || params.num_params() != self.m.len() {
            return Err(Error::LengthMismatch(self.m.len(), grads.num_params()));
        }
        let g = grads.flat();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite gradient at step {}",
                self.step + 1
            )));
        }
        let scale = match self.config.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
            ..
        } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let mut p = params.flat();
        for i in 0..p.len() {
            let gi = g[i] * scale;
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * gi;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * gi * gi;
            p[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence(format!(
                "non-finite parameter at step {}",
                self.step
            )));
        }
        params.set_flat(&p)?;
        Ok(norm)
    }
}
