use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

/// Adam with weight decay added to the gradient and an exponential
/// learning-rate schedule stepped once per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub gamma: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64, weight_decay: f64, gamma: f64) -> Result<Self> {
        if !(lr >= 0.0 && lr.is_finite()) || !(weight_decay >= 0.0) || !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::Config(format!(
                "invalid optimizer settings lr={lr} wd={weight_decay} gamma={gamma}"
            )));
        }
        Ok(Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            gamma,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        })
    }

    /// One update of `params.data` from `grads`.
    pub fn update(&mut self, params: &mut ParamStore, grads: &[f64]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::shape("gradient", params.len(), grads.len()));
        }
        if let Some(k) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {}", params.name_of(k))));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (k, theta) in params.data.iter_mut().enumerate() {
            let g = grads[k] + self.weight_decay * *theta;
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[k] / c1;
            let v_hat = self.v[k] / c2;
            *theta -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }

    /// Epoch boundary of the exponential schedule.
    pub fn decay(&mut self) {
        self.lr *= self.gamma;
    }
}
