use serde::{Deserialize, Serialize};

use super::{SearchSpace, SuperNet};
use crate::grad::{mlp_forward, DenseLayer, Matrix};
use crate::{Error, Result};

/// Indices of the neurons kept in one hidden layer: every logit `>= 0`, or
/// the single highest logit (lowest index on ties) when none qualifies.
pub fn kept_indices(logits: &[f64]) -> Vec<usize> {
    let open: Vec<usize> = (0..logits.len()).filter(|&j| logits[j] >= 0.0).collect();
    if !open.is_empty() || logits.is_empty() {
        return open;
    }
    let mut best = 0;
    for (j, &g) in logits.iter().enumerate() {
        if g > logits[best] {
            best = j;
        }
    }
    vec![best]
}

/// 0/1 mask form of [`kept_indices`].
pub fn deterministic_mask(logits: &[f64]) -> Vec<f64> {
    let mut mask = vec![0.0; logits.len()];
    for j in kept_indices(logits) {
        mask[j] = 1.0;
    }
    mask
}

/// A standalone fully connected network cut out of a SuperNet, or any plain
/// MLP trained from scratch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub space: SearchSpace,
    /// Kept neuron indices of each hidden layer, sorted ascending.
    pub kept: Vec<Vec<usize>>,
    pub layers: Vec<DenseLayer>,
}

impl Architecture {
    pub(super) fn extract(net: &SuperNet) -> Self {
        let kept: Vec<Vec<usize>> = net.gates.logits().iter().map(|g| kept_indices(g)).collect();
        let hidden = kept.len();
        let all_in: Vec<usize> = (0..net.space.input_dim).collect();
        let all_out: Vec<usize> = (0..net.space.output_dim).collect();
        let layers = (0..=hidden)
            .map(|l| {
                let rows = if l == hidden { &all_out } else { &kept[l] };
                let cols = if l == 0 { &all_in } else { &kept[l - 1] };
                let src = &net.layers[l];
                DenseLayer {
                    weight: src.weight.select(rows, cols),
                    bias: rows.iter().map(|&r| src.bias[r]).collect(),
                }
            })
            .collect();
        Architecture {
            space: net.space,
            kept,
            layers,
        }
    }

    /// Wraps explicit layers (e.g. a freshly initialized fixed-width MLP).
    pub fn from_layers(space: SearchSpace, layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.len() != space.hidden_layers + 1 {
            return Err(Error::shape("Architecture layers", space.hidden_layers + 1, layers.len()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::shape("Architecture chaining", pair[0].out_dim(), pair[1].in_dim()));
            }
        }
        if layers[0].in_dim() != space.input_dim || layers[layers.len() - 1].out_dim() != space.output_dim {
            return Err(Error::shape(
                "Architecture boundary",
                format!("{} -> {}", space.input_dim, space.output_dim),
                format!("{} -> {}", layers[0].in_dim(), layers[layers.len() - 1].out_dim()),
            ));
        }
        let kept = layers[..layers.len() - 1]
            .iter()
            .map(|l| (0..l.out_dim()).collect())
            .collect();
        Ok(Architecture { space, kept, layers })
    }

    /// Widths including input and output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.space.input_dim];
        w.extend(self.kept.iter().map(Vec::len));
        w.push(self.space.output_dim);
        w
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.kept.iter().map(Vec::len).collect()
    }

    pub fn neuron_count(&self) -> usize {
        self.kept.iter().map(Vec::len).sum()
    }

    pub fn param_count(&self, convention: ParamConvention) -> u64 {
        count_parameters(&self.widths(), convention)
    }

    /// Plain MLP forward: linear, ReLU on hidden layers, linear output.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.space.input_dim {
            return Err(Error::shape(
                "Architecture predict",
                format!("{} input columns", self.space.input_dim),
                format!("{} input columns", x.cols()),
            ));
        }
        Ok(mlp_forward(&self.layers, x)?.output)
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }
}

/// How parameters are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamConvention {
    /// Weights between consecutive hidden layers only; input layer, output
    /// layer and biases excluded. Five hidden layers of 512 give 1,048,576.
    Hidden,
    /// Every weight and bias from input to output.
    Full,
}

/// Parameter count for an MLP with the given widths (input and output included).
pub fn count_parameters(widths: &[usize], convention: ParamConvention) -> u64 {
    match convention {
        ParamConvention::Hidden => {
            if widths.len() < 2 {
                return 0;
            }
            let hidden = &widths[1..widths.len() - 1];
            hidden.windows(2).map(|w| (w[0] * w[1]) as u64).sum()
        }
        ParamConvention::Full => widths.windows(2).map(|w| ((w[0] + 1) * w[1]) as u64).sum(),
    }
}
