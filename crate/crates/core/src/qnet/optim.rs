use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RmsPropConfig {
    pub lr: f64,
    /// Decay of the squared-gradient average.
    pub rho: f64,
    pub eps: f64,
    /// Gradients are rescaled to this global L2 norm when larger; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            rho: 0.99,
            eps: 1e-8,
            clip_norm: Some(10.0),
        }
    }
}

impl RmsPropConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "optimizer.lr must be positive, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::Config(format!(
                "optimizer.rho must be in [0, 1), got {}",
                self.rho
            )));
        }
        if self.eps <= 0.0 {
            return Err(Error::Config("optimizer.eps must be positive".into()));
        }
        if matches!(self.clip_norm, Some(c) if c <= 0.0) {
            return Err(Error::Config("optimizer.clip_norm must be positive".into()));
        }
        Ok(())
    }
}

pub fn global_norm(g: &[f64]) -> f64 {
    super::kernels::dot(g, g).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmsProp {
    pub config: RmsPropConfig,
    pub mean_square: Vec<f64>,
    pub steps: u64,
}

impl RmsProp {
    pub fn new(config: RmsPropConfig, n_params: usize) -> Self {
        Self {
            config,
            mean_square: vec![0.0; n_params],
            steps: 0,
        }
    }

    /// Clips, then applies one update. Returns the gradient norm before clipping.
    pub fn apply(&mut self, params: &mut [f64], grads: &[f64]) -> Result<f64> {
        if grads.len() != params.len() || self.mean_square.len() != params.len() {
            return Err(Error::Invalid("gradient and parameter sizes differ".into()));
        }
        let norm = global_norm(grads);
        if !norm.is_finite() {
            return Err(Error::NonFinite("gradient norm is not finite".into()));
        }
        let scale = match self.config.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        let RmsPropConfig { lr, rho, eps, .. } = self.config;
        for ((p, g), ms) in params
            .iter_mut()
            .zip(grads)
            .zip(self.mean_square.iter_mut())
        {
            let g = g * scale;
            *ms = rho * *ms + (1.0 - rho) * g * g;
            *p -= lr * g / (ms.sqrt() + eps);
        }
        self.steps += 1;
        Ok(norm)
    }
}
