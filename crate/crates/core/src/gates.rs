//! Per-neuron stochastic gates.
//!
//! Each hidden neuron carries one real logit `g`. The "on" category has logit
//! `g`, the "off" category is pinned at zero, and both receive independent
//! standard Gumbel noise. With two categories the Gumbel-Softmax collapses to
//!
//! ```text
//! p = sigmoid((g + o1 - o2) / tau)
//! ```
//!
//! The forward pass uses the hard value `z = [p >= 0.5]`; the backward pass
//! routes the gradient of `z` through `dp/dg = p (1 - p) / tau`
//! (straight-through). Because `o1 - o2` is standard logistic, the hard sample
//! is open with probability exactly `sigmoid(g)` for every `tau`.

use rand::distr::{Distribution, Open01};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::grad::Matrix;
use crate::{Error, Result};

/// Soft probabilities are clamped into `[P_MIN, 1 - P_MIN]`.
pub const P_MIN: f64 = 1e-12;

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Standard Gumbel variate from a uniform draw on the open interval (0, 1).
pub fn gumbel_from_uniform(u: f64) -> f64 {
    -(-u.ln()).ln()
}

/// `n` independent standard Gumbel samples.
pub fn sample_gumbel<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| gumbel_from_uniform(Open01.sample(rng)))
        .collect()
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Argument(format!("temperature must be positive, got {tau}")))
    }
}

/// Relaxed open probability of one gate under noise `(o1, o2)`.
pub fn gate_soft_prob(g: f64, o1: f64, o2: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(soft_prob_unchecked(g, o1, o2, tau))
}

#[inline]
fn soft_prob_unchecked(g: f64, o1: f64, o2: f64, tau: f64) -> f64 {
    sigmoid((g + o1 - o2) / tau).clamp(P_MIN, 1.0 - P_MIN)
}

/// Hard gate value: 1 when `p >= 0.5`, else 0.
pub fn gate_hard(p: f64) -> f64 {
    if p >= 0.5 {
        1.0
    } else {
        0.0
    }
}

/// Straight-through gradient of a gate logit given the gradient of its hard value.
pub fn gate_backward(d_z: f64, p: f64, tau: f64) -> f64 {
    d_z * p * (1.0 - p) / tau
}

/// Noise-free open probability, used for extraction and size reporting.
pub fn deterministic_open_prob(g: f64) -> f64 {
    let p = sigmoid(g);
    // sigmoid rounds to exactly 0.5 for |g| below ~1e-16; keep the sign test exact
    if g < 0.0 {
        p.min(0.5 - f64::EPSILON / 4.0)
    } else {
        p
    }
}

/// How Gumbel noise is shared inside a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseSharing {
    /// One noise pair per gate per forward pass, shared by all rows.
    #[default]
    PerBatch,
    /// A fresh noise pair per gate for every row.
    PerSample,
}

/// All gate logits of a SuperNet, one row per hidden layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateBank {
    logits: Vec<Vec<f64>>,
    tau: f64,
}

impl GateBank {
    pub fn new(hidden_layers: usize, width: usize, init: f64, tau: f64) -> Result<Self> {
        check_tau(tau)?;
        if !init.is_finite() {
            return Err(Error::Argument(format!("gate init must be finite, got {init}")));
        }
        Ok(GateBank {
            logits: vec![vec![init; width]; hidden_layers],
            tau,
        })
    }

    pub fn from_logits(logits: Vec<Vec<f64>>, tau: f64) -> Result<Self> {
        check_tau(tau)?;
        if logits.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                block: "gate logits".into(),
            });
        }
        Ok(GateBank { logits, tau })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn layers(&self) -> usize {
        self.logits.len()
    }

    pub fn layer(&self, l: usize) -> &[f64] {
        &self.logits[l]
    }

    pub fn layer_mut(&mut self, l: usize) -> &mut [f64] {
        &mut self.logits[l]
    }

    pub fn logits(&self) -> &[Vec<f64>] {
        &self.logits
    }

    pub fn len(&self) -> usize {
        self.logits.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Mutable parameter blocks in optimizer order (one per layer).
    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.logits.iter_mut().map(|l| l.as_mut_slice()).collect()
    }

    /// Sum of noise-free open probabilities.
    pub fn expected_size(&self) -> f64 {
        self.logits
            .iter()
            .flatten()
            .map(|&g| deterministic_open_prob(g))
            .sum()
    }

    /// Count of logits at or above zero.
    pub fn open_count(&self) -> usize {
        self.logits.iter().flatten().filter(|&&g| g >= 0.0).count()
    }

    /// Draws noise for a batch of `rows` rows.
    pub fn draw_noise<R: Rng + ?Sized>(&self, rng: &mut R, rows: usize, sharing: NoiseSharing) -> GateNoise {
        let r = match sharing {
            NoiseSharing::PerBatch => 1,
            NoiseSharing::PerSample => rows.max(1),
        };
        let mut o1 = Vec::with_capacity(self.layers());
        let mut o2 = Vec::with_capacity(self.layers());
        for layer in &self.logits {
            let n = r * layer.len();
            o1.push(Matrix::from_raw(r, layer.len(), sample_gumbel(rng, n)));
            o2.push(Matrix::from_raw(r, layer.len(), sample_gumbel(rng, n)));
        }
        GateNoise { o1, o2 }
    }

    /// Soft and hard gate values under the given noise.
    pub fn realize(&self, noise: GateNoise) -> Result<GateSample> {
        if noise.o1.len() != self.layers() || noise.o2.len() != self.layers() {
            return Err(Error::shape("gate noise", self.layers(), noise.o1.len()));
        }
        let mut soft = Vec::with_capacity(self.layers());
        let mut hard = Vec::with_capacity(self.layers());
        for (l, logits) in self.logits.iter().enumerate() {
            let (o1, o2) = (&noise.o1[l], &noise.o2[l]);
            if o1.cols() != logits.len() || o2.shape() != o1.shape() {
                return Err(Error::shape(
                    "gate noise",
                    format!("{} gates in layer {l}", logits.len()),
                    format!("{}x{} / {}x{}", o1.rows(), o1.cols(), o2.rows(), o2.cols()),
                ));
            }
            let p: Vec<f64> = o1
                .as_slice()
                .iter()
                .zip(o2.as_slice())
                .enumerate()
                .map(|(k, (&a, &b))| soft_prob_unchecked(logits[k % logits.len()], a, b, self.tau))
                .collect();
            let z = p.iter().map(|&p| gate_hard(p)).collect();
            soft.push(Matrix::from_raw(o1.rows(), o1.cols(), p));
            hard.push(Matrix::from_raw(o1.rows(), o1.cols(), z));
        }
        Ok(GateSample {
            noise,
            soft,
            hard,
            tau: self.tau,
        })
    }
}

/// Gumbel noise pairs for every gate, `rows x width` per layer (`rows` is 1
/// when the noise is shared across the batch).
#[derive(Debug, Clone, PartialEq)]
pub struct GateNoise {
    pub o1: Vec<Matrix>,
    pub o2: Vec<Matrix>,
}

/// One stochastic realization of all gates.
#[derive(Debug, Clone, PartialEq)]
pub struct GateSample {
    pub noise: GateNoise,
    /// Relaxed probabilities `p`.
    pub soft: Vec<Matrix>,
    /// Hard values `z` in {0, 1}.
    pub hard: Vec<Matrix>,
    pub tau: f64,
}

impl GateSample {
    /// Straight-through gate gradient for layer `l`.
    ///
    /// `d_h` is `dL/dh` and `a` the ungated activation (both `n x width`);
    /// `dL/dz = d_h * a` is summed over the rows sharing each noise draw.
    pub(crate) fn logit_grad(&self, l: usize, d_h: &Matrix, a: &Matrix) -> Vec<f64> {
        let p = &self.soft[l];
        let width = p.cols();
        let mut grad = vec![0.0; width];
        let shared = p.rows() == 1;
        for i in 0..d_h.rows() {
            let pr = if shared { p.row(0) } else { p.row(i) };
            for (j, ((g, &dh), &av)) in grad.iter_mut().zip(d_h.row(i)).zip(a.row(i)).enumerate() {
                *g += gate_backward(dh * av, pr[j], self.tau);
            }
        }
        grad
    }

    /// Mask value for row `i` of layer `l`.
    pub(crate) fn mask_row(&self, l: usize, i: usize, relaxed: bool) -> &[f64] {
        let m = if relaxed { &self.soft[l] } else { &self.hard[l] };
        if m.rows() == 1 {
            m.row(0)
        } else {
            m.row(i)
        }
    }
}
