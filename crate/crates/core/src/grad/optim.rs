use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    /// Adam with bias correction.
    #[default]
    Adaptive,
    PlainSgd,
}

/// Optimizer over an ordered list of parameter blocks.
///
/// Blocks are matched positionally between calls; the first step fixes the
/// block shapes and every later step must present the same shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Argument(format!("learning rate must be positive, got {lr}")));
        }
        Ok(OptimizerState {
            kind,
            lr,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        })
    }

    pub fn adam(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::Adaptive, lr)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.second_moment
    }

    /// Applies one update. Shapes and finiteness are validated before any
    /// parameter is written.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape("optimizer step", params.len(), grads.len()));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() {
                return Err(Error::shape(
                    "optimizer step",
                    format!("block {i} of length {}", p.len()),
                    format!("gradient of length {}", g.len()),
                ));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    block: format!("gradient block {i}"),
                });
            }
        }
        if self.kind == OptimizerKind::Adaptive {
            if self.step == 0 && self.first_moment.is_empty() {
                self.first_moment = grads.iter().map(|g| vec![0.0; g.len()]).collect();
                self.second_moment = self.first_moment.clone();
            }
            if self.first_moment.len() != grads.len()
                || self.first_moment.iter().zip(grads).any(|(m, g)| m.len() != g.len())
            {
                return Err(Error::shape(
                    "optimizer step",
                    "parameter blocks matching the first step",
                    "a different block layout",
                ));
            }
        }

        self.step += 1;
        match self.kind {
            OptimizerKind::PlainSgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (p, g) in p.iter_mut().zip(g.iter()) {
                        *p -= self.lr * g;
                    }
                }
            }
            OptimizerKind::Adaptive => {
                let t = self.step as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.first_moment)
                    .zip(&mut self.second_moment)
                {
                    for (((p, &g), m), v) in p.iter_mut().zip(g.iter()).zip(m).zip(v) {
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        *p -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        Ok(())
    }
}
