//! Step gradients that skip closed neurons.
//!
//! When one noise draw is shared by the whole batch, a closed neuron outputs
//! exactly zero on every row and contributes nothing downstream. The weight
//! step is then a plain MLP over the open neurons. The gate step still needs
//! every neuron's activation `a` and `dL/dh`, but only open neurons feed
//! forward and carry signal back. Results equal the dense masked pass up to
//! floating-point summation order.

use super::{GradientSet, SuperNet, Which};
use crate::gates::GateSample;
use crate::grad::{mlp_backward, mlp_forward, relu_mask_in_place, relu_matrix, DenseLayer, LayerGrad, Matrix};
use crate::loss::{loss_and_grad, Targets};
use crate::{Error, Result};

fn sub_layer(layer: &DenseLayer, rows: &[usize], cols: &[usize]) -> DenseLayer {
    DenseLayer {
        weight: layer.weight.select(rows, cols),
        bias: rows.iter().map(|&r| layer.bias[r]).collect(),
    }
}

fn all(n: usize) -> Vec<usize> {
    (0..n).collect()
}

impl SuperNet {
    /// Loss and step gradients for a batch under a batch-shared hard gate
    /// sample, computed on the open sub-network.
    pub fn step_gradients(&self, x: &Matrix, targets: &Targets, sample: &GateSample, which: Which) -> Result<(f64, GradientSet)> {
        let hidden = self.hidden_layers();
        if sample.hard.len() != hidden || sample.hard.iter().any(|m| m.rows() != 1 || m.cols() != self.space.max_width) {
            return Err(Error::State("step_gradients needs one batch-shared gate sample per hidden layer".into()));
        }
        let open: Vec<Vec<usize>> = sample
            .hard
            .iter()
            .map(|m| m.row(0).iter().enumerate().filter(|(_, &z)| z != 0.0).map(|(j, _)| j).collect())
            .collect();
        if open.iter().any(Vec::is_empty) {
            // Zero-width sub-networks are not representable; take the dense path.
            let trace = self.forward_with_noise(x, sample.noise.clone(), false)?;
            return self.backward(&trace, targets, which);
        }
        if x.cols() != self.space.input_dim {
            return Err(Error::shape("SuperNet step", self.space.input_dim, x.cols()));
        }
        let inputs = all(self.space.input_dim);
        let outputs = all(self.space.output_dim);
        let cols_in = |l: usize| if l == 0 { &inputs } else { &open[l - 1] };
        let rows_out = |l: usize| if l == hidden { &outputs } else { &open[l] };
        match which {
            Which::Weights => {
                let sub: Vec<DenseLayer> = (0..=hidden)
                    .map(|l| sub_layer(&self.layers[l], rows_out(l), cols_in(l)))
                    .collect();
                let trace = mlp_forward(&sub, x)?;
                let (loss, d_out) = loss_and_grad(&trace.output, targets)?;
                let sub_grads = mlp_backward(&sub, &trace, &d_out)?;
                let grads = sub_grads
                    .iter()
                    .enumerate()
                    .map(|(l, g)| {
                        let layer = &self.layers[l];
                        let mut full = LayerGrad {
                            weight: Matrix::zeros(layer.out_dim(), layer.in_dim()),
                            bias: vec![0.0; layer.out_dim()],
                        };
                        let cols = cols_in(l);
                        for (ri, &r) in rows_out(l).iter().enumerate() {
                            full.bias[r] = g.bias[ri];
                            let src = g.weight.row(ri);
                            let dst = full.weight.row_mut(r);
                            for (ci, &c) in cols.iter().enumerate() {
                                dst[c] = src[ci];
                            }
                        }
                        full
                    })
                    .collect();
                Ok((loss, GradientSet::Weights(grads)))
            }
            Which::Gates => {
                let n = x.rows();
                let rows_all = all(n);
                let width = all(self.space.max_width);
                let mut pre = Vec::with_capacity(hidden);
                let mut post = Vec::with_capacity(hidden);
                let mut h = x.clone();
                for l in 0..hidden {
                    let layer = sub_layer(&self.layers[l], &width, cols_in(l));
                    let z = layer.forward_batch(&h)?;
                    let a = relu_matrix(&z);
                    h = a.select(&rows_all, &open[l]);
                    pre.push(z);
                    post.push(a);
                }
                let out_layer = sub_layer(&self.layers[hidden], &outputs, &open[hidden - 1]);
                let output = out_layer.forward_batch(&h)?;
                let (loss, mut d) = loss_and_grad(&output, targets)?;
                let mut grads = vec![Vec::new(); hidden];
                for k in (0..hidden).rev() {
                    // dL/dh for every neuron of hidden layer k
                    let above = sub_layer(&self.layers[k + 1], rows_out(k + 1), &width);
                    let d_h = above.input_grad_batch(&d)?;
                    grads[k] = sample.logit_grad(k, &d_h, &post[k]);
                    if k == 0 {
                        break;
                    }
                    let mut d_z = d_h.select(&rows_all, &open[k]);
                    relu_mask_in_place(&mut d_z, &pre[k].select(&rows_all, &open[k]));
                    d = d_z;
                }
                Ok((loss, GradientSet::Gates(grads)))
            }
        }
    }
}
