use serde::{Deserialize, Serialize};

use super::Params;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// First and second moment estimates mirroring a parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &impl Params, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            config,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One bias-corrected Adam update of `params` along `grads`.
    pub fn step<P: Params>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let g = grads.tensors();
        let mut p = params.tensors_mut();
        if p.len() != self.m.len() || g.len() != self.m.len() {
            return Err(Error::Dimension {
                context: "adam tensor count",
                expected: self.m.len(),
                got: p.len().min(g.len()),
            });
        }
        for ((pt, gt), mt) in p.iter().zip(&g).zip(&self.m) {
            if pt.len() != mt.len() || gt.len() != mt.len() {
                return Err(Error::Dimension {
                    context: "adam tensor shape",
                    expected: mt.len(),
                    got: pt.len(),
                });
            }
        }
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        let power = (self.t + 1) as i32;
        let c1 = 1.0 - b1.powi(power);
        let c2 = 1.0 - b2.powi(power);
        for (((pt, gt), mt), vt) in p.iter_mut().zip(&g).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..pt.len() {
                let gi = gt[i];
                mt[i] = b1 * mt[i] + (1.0 - b1) * gi;
                vt[i] = b2 * vt[i] + (1.0 - b2) * gi * gi;
                let m_hat = mt[i] / c1;
                let v_hat = vt[i] / c2;
                pt[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        self.t += 1;
        Ok(())
    }
}
