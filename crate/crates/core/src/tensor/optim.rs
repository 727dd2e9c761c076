use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Peak learning-rate scale of the inverse-square-root schedule.
    pub lr_scale: f64,
    pub warmup: u64,
    pub d_model: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.98, eps: 1e-9, lr_scale: 1.0, warmup: 400, d_model: 64, clip_norm: Some(5.0) }
    }
}

/// `scale * d_model^-0.5 * min(t^-0.5, t * warmup^-1.5)`
pub fn noam_rate(scale: f64, d_model: usize, warmup: u64, t: u64) -> f64 {
    let t = t.max(1) as f64;
    let w = warmup.max(1) as f64;
    scale * (d_model as f64).powf(-0.5) * t.powf(-0.5).min(t * w.powf(-1.5))
}

/// Adaptive-moment optimizer with warmup then inverse-square-root decay.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let first: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        OptimizerState { config, step: 0, second: first.clone(), first }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn learning_rate(&self, t: u64) -> f64 {
        noam_rate(self.config.lr_scale, self.config.d_model, self.config.warmup, t)
    }

    /// Applies one update. `grads[i]` belongs to parameter `i`; `None` means
    /// no gradient reached it this step. On a non-finite gradient the state
    /// and parameters are left untouched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Option<Tensor>]) -> Result<f64> {
        if grads.len() != params.len() {
            return Err(Error::shape("optimizer_step", format!("{} grads for {} params", grads.len(), params.len())));
        }
        let mut norm_sq = 0.0;
        for (g, (name, p)) in grads.iter().zip(params.iter()) {
            if let Some(g) = g {
                if g.shape() != p.shape() {
                    return Err(Error::shape("optimizer_step", format!("gradient for `{name}` has shape {:?}", g.shape())));
                }
                if !g.is_finite() {
                    return Err(Error::NonFinite { op: "optimizer gradient" });
                }
                norm_sq += g.data().iter().map(|v| v * v).sum::<f64>();
            }
        }
        let clip = match self.config.clip_norm {
            Some(max) if norm_sq.sqrt() > max => max / norm_sq.sqrt(),
            _ => 1.0,
        };
        self.step += 1;
        let t = self.step;
        let lr = self.learning_rate(t);
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        let c1 = 1.0 - beta1.powi(t as i32);
        let c2 = 1.0 - beta2.powi(t as i32);
        for (i, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            let p = params.get_mut(id).data_mut();
            let g = grads[i].as_ref();
            for j in 0..p.len() {
                let gj = g.map_or(0.0, |g| g.data()[j] * clip);
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                p[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(lr)
    }
}
