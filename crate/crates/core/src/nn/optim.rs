use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adaptive-moment optimizer with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, cfg: AdamConfig) -> Self {
        Self { cfg, step: 0, m: store.zeros_like(), v: store.zeros_like() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Apply one update. A non-finite gradient rejects the whole step and
    /// leaves parameters and moments untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::shape(format!("{} gradients for {} parameters", grads.len(), self.m.len())));
        }
        for (g, m) in grads.iter().zip(&self.m) {
            g.check_same(m)?;
            if !g.is_finite() {
                return Err(Error::NonFinite("gradient"));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            let p = store.get_mut_by_index(i);
            for j in 0..g.data.len() {
                let gj = g.data[j];
                let m = &mut self.m[i].data[j];
                let v = &mut self.v[i].data[j];
                *m = beta1 * *m + (1.0 - beta1) * gj;
                *v = beta2 * *v + (1.0 - beta2) * gj * gj;
                let mh = *m / c1;
                let vh = *v / c2;
                p.data[j] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}
