//! The gated SuperNet.
//!
//! A SuperNet is the largest MLP in the search space: `hidden_layers` hidden
//! layers, each `max_width` wide, with one gate per hidden neuron. Every
//! candidate architecture is a sub-network obtained by closing gates, so all
//! candidates share the SuperNet's weights.
//!
//! The forward pass for hidden layer `l` is
//!
//! ```text
//! z = W[l] h + b[l];  a = relu(z);  h = a * mask[l]
//! ```
//!
//! followed by a plain linear output layer. The mask is a Gumbel sample in
//! [`Gating::Stochastic`] mode, the thresholded noise-free probability in
//! [`Gating::Deterministic`] mode, and all ones in [`Gating::Ungated`] mode.

mod checkpoint;
mod extract;
mod sparse;

pub use checkpoint::{Checkpoint, CheckpointModel, CHECKPOINT_FORMAT};
pub use extract::{count_parameters, deterministic_mask, kept_indices, Architecture, ParamConvention};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gates::{GateBank, GateNoise, GateSample, NoiseSharing};
use crate::grad::{relu_mask_in_place, relu_matrix, DenseLayer, LayerGrad, Matrix};
use crate::loss::{loss_and_grad, Targets, Task};
use crate::{Error, Result};

/// Shape of the search space: the SuperNet has `hidden_layers` layers of
/// `max_width` neurons between `input_dim` inputs and `output_dim` outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_layers: usize,
    pub max_width: usize,
    pub task: Task,
}

impl SearchSpace {
    pub const DEFAULT_HIDDEN_LAYERS: usize = 5;
    pub const DEFAULT_MAX_WIDTH: usize = 512;

    pub fn new(input_dim: usize, output_dim: usize, hidden_layers: usize, max_width: usize, task: Task) -> Result<Self> {
        let s = SearchSpace {
            input_dim,
            output_dim,
            hidden_layers,
            max_width,
            task,
        };
        s.validate()?;
        Ok(s)
    }

    /// Space with the default depth and width.
    pub fn with_defaults(input_dim: usize, output_dim: usize, task: Task) -> Result<Self> {
        Self::new(input_dim, output_dim, Self::DEFAULT_HIDDEN_LAYERS, Self::DEFAULT_MAX_WIDTH, task)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_layers == 0 || self.max_width == 0 {
            return Err(Error::Argument(format!(
                "search space dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Layer widths of the full SuperNet, input and output included.
    pub fn full_widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(std::iter::repeat_n(self.max_width, self.hidden_layers));
        w.push(self.output_dim);
        w
    }

    pub fn gate_count(&self) -> usize {
        self.hidden_layers * self.max_width
    }
}

/// Mask used for each hidden layer during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gating {
    /// Fresh Gumbel sample, hard values in the forward pass.
    Stochastic,
    /// Noise-free threshold `sigmoid(g) >= 0.5`, with the same empty-layer
    /// fallback extraction uses.
    Deterministic,
    /// Every neuron open.
    Ungated,
}

/// Which parameter set a backward pass produces gradients for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Weights,
    Gates,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GradientSet {
    Weights(Vec<LayerGrad>),
    /// One gradient vector per hidden layer.
    Gates(Vec<Vec<f64>>),
}

#[derive(Debug, Clone)]
enum TraceMasks {
    Sampled { sample: GateSample, relaxed: bool },
    Fixed(Vec<Vec<f64>>),
}

/// Cached intermediate values of a SuperNet forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input seen by each of the `L + 1` layers; `inputs[l + 1]` is the gated
    /// output `h` of hidden layer `l`.
    pub inputs: Vec<Matrix>,
    /// Hidden pre-activations `z`.
    pub pre: Vec<Matrix>,
    /// Hidden post-activations `a` (before gating).
    pub post: Vec<Matrix>,
    pub output: Matrix,
    masks: TraceMasks,
}

impl ForwardTrace {
    pub fn predictions(&self) -> &Matrix {
        &self.output
    }

    /// Gate sample used, for stochastic traces.
    pub fn sample(&self) -> Option<&GateSample> {
        match &self.masks {
            TraceMasks::Sampled { sample, .. } => Some(sample),
            TraceMasks::Fixed(_) => None,
        }
    }

    /// Gated hidden output `h` of hidden layer `l`.
    pub fn gated(&self, l: usize) -> &Matrix {
        &self.inputs[l + 1]
    }
}

/// The gated SuperNet: weights for every layer plus one gate per hidden neuron.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperNet {
    pub space: SearchSpace,
    pub layers: Vec<DenseLayer>,
    pub gates: GateBank,
    pub seed: u64,
}

impl SuperNet {
    /// He-uniform weights drawn from `seed`; every gate logit set to `gate_init`.
    pub fn new(space: SearchSpace, seed: u64, gate_init: f64, tau: f64) -> Result<Self> {
        space.validate()?;
        let gates = GateBank::new(space.hidden_layers, space.max_width, gate_init, tau)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = space
            .full_widths()
            .windows(2)
            .map(|w| DenseLayer::he_uniform(w[0], w[1], &mut rng))
            .collect();
        Ok(SuperNet {
            space,
            layers,
            gates,
            seed,
        })
    }

    /// Rebuilds a SuperNet from stored parts, validating every shape.
    pub fn from_parts(space: SearchSpace, layers: Vec<DenseLayer>, gates: GateBank, seed: u64) -> Result<Self> {
        space.validate()?;
        let widths = space.full_widths();
        if layers.len() != widths.len() - 1 {
            return Err(Error::shape("SuperNet layers", widths.len() - 1, layers.len()));
        }
        for (l, (layer, w)) in layers.iter().zip(widths.windows(2)).enumerate() {
            if layer.in_dim() != w[0] || layer.out_dim() != w[1] || layer.bias.len() != w[1] {
                return Err(Error::shape(
                    "SuperNet layer",
                    format!("layer {l}: {}x{}", w[1], w[0]),
                    format!("{}x{}", layer.out_dim(), layer.in_dim()),
                ));
            }
        }
        if gates.layers() != space.hidden_layers
            || gates.logits().iter().any(|g| g.len() != space.max_width)
        {
            return Err(Error::shape(
                "SuperNet gates",
                format!("{}x{}", space.hidden_layers, space.max_width),
                format!("{} layers", gates.layers()),
            ));
        }
        Ok(SuperNet {
            space,
            layers,
            gates,
            seed,
        })
    }

    pub fn hidden_layers(&self) -> usize {
        self.space.hidden_layers
    }

    /// Expected number of open neurons, `sum sigmoid(g)`.
    pub fn expected_size(&self) -> f64 {
        self.gates.expected_size()
    }

    /// Mutable weight/bias blocks in optimizer order: `W0, b0, W1, b1, ...`.
    pub fn weight_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    /// Forward pass over a batch `x` (`n x input_dim`).
    pub fn forward<R: Rng + ?Sized>(&self, x: &Matrix, gating: Gating, rng: &mut R) -> Result<ForwardTrace> {
        self.forward_shared(x, gating, NoiseSharing::PerBatch, rng)
    }

    /// Like [`SuperNet::forward`] with an explicit noise sharing policy.
    pub fn forward_shared<R: Rng + ?Sized>(
        &self,
        x: &Matrix,
        gating: Gating,
        sharing: NoiseSharing,
        rng: &mut R,
    ) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let masks = match gating {
            Gating::Stochastic => {
                let noise = self.gates.draw_noise(rng, x.rows(), sharing);
                TraceMasks::Sampled {
                    sample: self.gates.realize(noise)?,
                    relaxed: false,
                }
            }
            Gating::Deterministic => TraceMasks::Fixed(
                self.gates.logits().iter().map(|g| deterministic_mask(g)).collect(),
            ),
            Gating::Ungated => TraceMasks::Fixed(vec![vec![1.0; self.space.max_width]; self.hidden_layers()]),
        };
        self.run(x, masks)
    }

    /// Forward pass with caller-supplied (frozen) gate noise. With `relaxed`
    /// the soft probabilities replace the hard mask, which makes the loss a
    /// smooth function of the gate logits.
    pub fn forward_with_noise(&self, x: &Matrix, noise: GateNoise, relaxed: bool) -> Result<ForwardTrace> {
        self.check_input(x)?;
        if noise.o1.iter().any(|m| m.rows() != 1 && m.rows() != x.rows()) {
            return Err(Error::shape("gate noise rows", format!("1 or {}", x.rows()), "another count"));
        }
        let sample = self.gates.realize(noise)?;
        self.run(x, TraceMasks::Sampled { sample, relaxed })
    }

    /// Deterministic-mode predictions.
    pub fn predict_deterministic(&self, x: &Matrix) -> Result<Matrix> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(self.forward(x, Gating::Deterministic, &mut rng)?.output)
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.space.input_dim {
            return Err(Error::shape(
                "SuperNet forward",
                format!("{} input columns", self.space.input_dim),
                format!("{} input columns", x.cols()),
            ));
        }
        Ok(())
    }

    fn run(&self, x: &Matrix, masks: TraceMasks) -> Result<ForwardTrace> {
        let hidden = self.hidden_layers();
        let mut inputs = Vec::with_capacity(hidden + 1);
        let mut pre = Vec::with_capacity(hidden);
        let mut post = Vec::with_capacity(hidden);
        let mut h = x.clone();
        for l in 0..hidden {
            let z = self.layers[l].forward_batch(&h)?;
            let a = relu_matrix(&z);
            let mut gated = a.clone();
            for i in 0..gated.rows() {
                let m = mask_row(&masks, l, i);
                for (v, &m) in gated.row_mut(i).iter_mut().zip(m) {
                    *v *= m;
                }
            }
            inputs.push(h);
            pre.push(z);
            post.push(a);
            h = gated;
        }
        let output = self.layers[hidden].forward_batch(&h)?;
        inputs.push(h);
        Ok(ForwardTrace {
            inputs,
            pre,
            post,
            output,
            masks,
        })
    }

    /// Loss of `trace` against `targets` and the requested gradients.
    ///
    /// The mask also gates the signal flowing back into the weights. Gate
    /// gradients follow the straight-through rule
    /// `dL/dg = sum_rows (dL/dh * a) * p (1 - p) / tau` and require a trace
    /// with sampled gates.
    pub fn backward(&self, trace: &ForwardTrace, targets: &Targets, which: Which) -> Result<(f64, GradientSet)> {
        self.check_trace(trace)?;
        let (loss, d_out) = loss_and_grad(&trace.output, targets)?;
        let grads = self.backward_from(trace, d_out, which)?;
        Ok((loss, grads))
    }

    /// Backward pass from an explicit `dL/d(output)`.
    pub fn backward_from(&self, trace: &ForwardTrace, d_out: Matrix, which: Which) -> Result<GradientSet> {
        self.check_trace(trace)?;
        if which == Which::Gates && trace.sample().is_none() {
            return Err(Error::State(
                "gate gradients need a forward trace with sampled gates".into(),
            ));
        }
        if d_out.shape() != trace.output.shape() {
            return Err(Error::shape(
                "SuperNet backward",
                format!("{:?}", trace.output.shape()),
                format!("{:?}", d_out.shape()),
            ));
        }
        let hidden = self.hidden_layers();
        let mut weight_grads = Vec::new();
        let mut gate_grads = vec![Vec::new(); hidden];
        let mut d = d_out;
        for l in (0..=hidden).rev() {
            let layer = &self.layers[l];
            if which == Which::Weights {
                weight_grads.push(layer.param_grad_batch(&d, &trace.inputs[l])?);
            }
            if l == 0 {
                break;
            }
            let k = l - 1;
            // dL/dh for hidden layer k
            let d_h = layer.input_grad_batch(&d)?;
            if which == Which::Gates {
                let sample = trace.sample().expect("checked above");
                gate_grads[k] = sample.logit_grad(k, &d_h, &trace.post[k]);
                if k == 0 {
                    break;
                }
            }
            let mut d_a = d_h;
            for i in 0..d_a.rows() {
                let m = mask_row(&trace.masks, k, i);
                for (v, &m) in d_a.row_mut(i).iter_mut().zip(m) {
                    *v *= m;
                }
            }
            relu_mask_in_place(&mut d_a, &trace.pre[k]);
            d = d_a;
        }
        Ok(match which {
            Which::Weights => {
                weight_grads.reverse();
                GradientSet::Weights(weight_grads)
            }
            Which::Gates => GradientSet::Gates(gate_grads),
        })
    }

    fn check_trace(&self, trace: &ForwardTrace) -> Result<()> {
        let ok = trace.inputs.len() == self.layers.len()
            && trace.pre.len() == self.hidden_layers()
            && trace
                .inputs
                .iter()
                .zip(&self.layers)
                .all(|(x, layer)| x.cols() == layer.in_dim())
            && trace.output.cols() == self.space.output_dim;
        if ok {
            Ok(())
        } else {
            Err(Error::State("forward trace does not belong to this network".into()))
        }
    }

    /// Extracts the sub-network of open neurons (see [`Architecture`]).
    pub fn extract_architecture(&self) -> Architecture {
        Architecture::extract(self)
    }
}

fn mask_row(masks: &TraceMasks, l: usize, i: usize) -> &[f64] {
    match masks {
        TraceMasks::Sampled { sample, relaxed } => sample.mask_row(l, i, *relaxed),
        TraceMasks::Fixed(m) => &m[l],
    }
}
