// SPDX-License-Identifier: MIT OR Apache-2.0

//! Adam with decoupled weight decay, and the learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adamw,
    /// Same update as `Adamw`: moments at the usual defaults, decay
    /// decoupled.
    Adam,
}

/// Optimizer hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Resolved AdamW constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerConfig {
    pub fn adamw(lr: f64, weight_decay: f64) -> Self {
        Self {
            optimizer: OptimizerKind::Adamw,
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn adam(lr: f64, weight_decay: f64) -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            ..Self::adamw(lr, weight_decay)
        }
    }

    pub fn resolve(&self) -> AdamW {
        AdamW {
            lr: self.lr,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn validate(&self) -> Result<()> {
        let o = self.resolve();
        let ok = o.lr.is_finite()
            && o.lr >= 0.0
            && o.weight_decay.is_finite()
            && o.weight_decay >= 0.0
            && (0.0..1.0).contains(&o.beta1)
            && (0.0..1.0).contains(&o.beta2)
            && o.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(LabError::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// First and second moment buffers, one per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    /// Updates applied so far.
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(sizes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v) = sizes.into_iter().map(|n| (vec![0.0; n], vec![0.0; n])).unzip();
        Self { step: 0, m, v }
    }

    /// One decoupled-decay Adam update at learning rate `lr`.
    ///
    /// `θ ← θ − lr·wd·θ`, then `θ ← θ − lr·m̂/(√v̂ + ε)` with bias-corrected
    /// moments.
    pub fn step(&mut self, opt: &AdamW, lr: f64, params: &mut [&mut [f64]], grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(LabError::InvalidArgument(format!(
                "optimizer holds {} buffers, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - opt.beta1.powi(t);
        let c2 = 1.0 - opt.beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if p.len() != g.len() || p.len() != m.len() {
                return Err(LabError::shape("adamw", &[p.len()], &[g.len()]));
            }
            for i in 0..p.len() {
                m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g[i];
                v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * opt.weight_decay * p[i];
                p[i] -= lr * m_hat / (v_hat.sqrt() + opt.eps);
            }
        }
        Ok(())
    }
}

/// Learning-rate schedule shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Linear ramp 0 → peak over the warmup window, then linear decay to 0 at
    /// the final iteration.
    WarmupLinear,
    Constant,
}

/// Learning rate at iteration `t` (0-based) of `total`.
pub fn learning_rate(schedule: Schedule, peak: f64, t: usize, total: usize, warmup: usize) -> f64 {
    match schedule {
        Schedule::Constant => peak,
        Schedule::WarmupLinear => {
            if t < warmup {
                peak * t as f64 / warmup as f64
            } else {
                let span = total.saturating_sub(1).saturating_sub(warmup);
                if span == 0 {
                    peak
                } else {
                    let left = total.saturating_sub(1).saturating_sub(t);
                    peak * left as f64 / span as f64
                }
            }
        }
    }
}
