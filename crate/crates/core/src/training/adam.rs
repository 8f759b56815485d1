use serde::{Deserialize, Serialize};

use crate::diff::Matrix;
use crate::error::{Error, Result};

const DECAY_FACTOR: f64 = 0.95;
const DECAY_EVERY: usize = 10;

/// Step decay: `lr₀ · 0.95^⌊epoch / 10⌋`.
pub fn lr_schedule(epoch: usize, lr0: f64) -> f64 {
    lr0 * DECAY_FACTOR.powi((epoch / DECAY_EVERY) as i32)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for one group of parameter arrays.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl AdamState {
    fn ensure(&mut self, params: &[&mut Matrix]) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::ShapeMismatch {
                op: "adam_state",
                left: (self.m.len(), 0),
                right: (params.len(), 0),
            });
        }
        for (m, p) in self.m.iter().zip(params) {
            if m.shape() != p.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_state",
                    left: m.shape(),
                    right: p.shape(),
                });
            }
        }
        Ok(())
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [&mut Matrix], grads: &[Matrix], state: &mut AdamState, cfg: &AdamConfig, lr: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::ShapeMismatch {
            op: "adam_step",
            left: (params.len(), 0),
            right: (grads.len(), 0),
        });
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                left: p.shape(),
                right: g.shape(),
            });
        }
    }
    state.ensure(params)?;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);

    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let p = p.as_mut_slice();
        let m = m.as_mut_slice();
        let v = v.as_mut_slice();
        for (i, &gi) in g.as_slice().iter().enumerate() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
