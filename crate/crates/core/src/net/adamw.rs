//! AdamW with decoupled weight decay.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamW {
    pub fn new(n_params: usize, lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn with_defaults(n_params: usize) -> Self {
        Self::new(n_params, 1e-3, 1e-5)
    }

    /// One update. `blocks` names parameter ranges for the non-finite gradient error.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], blocks: &[(String, Range<usize>)]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::DimMismatch {
                expected: self.m.len(),
                got: params.len().max(grads.len()),
            });
        }
        if let Some(k) = grads.iter().position(|g| !g.is_finite()) {
            let name = blocks
                .iter()
                .find(|(_, r)| r.contains(&k))
                .map(|(n, _)| n.as_str())
                .unwrap_or("parameters");
            return Err(Error::NonFinite(format!("gradient of {name} (index {k})")));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let decay = 1.0 - self.lr * self.weight_decay;
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *p *= decay;
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let mh = *m / bc1;
            let vh = *v / bc2;
            *p -= self.lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(())
    }
}
