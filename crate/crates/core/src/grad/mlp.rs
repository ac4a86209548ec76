use super::{relu_mask_in_place, relu_matrix, DenseLayer, LayerGrad, Matrix};
use crate::{Error, Result};

/// Cached activations of an ungated MLP forward pass.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    /// Input seen by each layer (`inputs[0]` is the batch itself).
    pub inputs: Vec<Matrix>,
    /// Pre-activations of each hidden layer.
    pub pre_activations: Vec<Matrix>,
    pub output: Matrix,
}

/// Linear layers with ReLU between them and a linear output layer.
pub fn mlp_forward(layers: &[DenseLayer], x: &Matrix) -> Result<MlpTrace> {
    let Some((last, hidden)) = layers.split_last() else {
        return Err(Error::Argument("network has no layers".into()));
    };
    let mut inputs = Vec::with_capacity(layers.len());
    let mut pre_activations = Vec::with_capacity(hidden.len());
    let mut h = x.clone();
    for layer in hidden {
        let z = layer.forward_batch(&h)?;
        let a = relu_matrix(&z);
        inputs.push(h);
        pre_activations.push(z);
        h = a;
    }
    let output = last.forward_batch(&h)?;
    inputs.push(h);
    Ok(MlpTrace {
        inputs,
        pre_activations,
        output,
    })
}

/// Parameter gradients for every layer given `dL/d(output)`.
pub fn mlp_backward(layers: &[DenseLayer], trace: &MlpTrace, d_out: &Matrix) -> Result<Vec<LayerGrad>> {
    if trace.inputs.len() != layers.len() {
        return Err(Error::State("trace was produced by a different network".into()));
    }
    let mut grads = Vec::with_capacity(layers.len());
    let mut d = d_out.clone();
    for (l, layer) in layers.iter().enumerate().rev() {
        grads.push(layer.param_grad_batch(&d, &trace.inputs[l])?);
        if l > 0 {
            let mut dx = layer.input_grad_batch(&d)?;
            relu_mask_in_place(&mut dx, &trace.pre_activations[l - 1]);
            d = dx;
        }
    }
    grads.reverse();
    Ok(grads)
}
