//! Dense-layer numerical kernel.
//!
//! Everything here works on row-major `f64` buffers. Batched routines treat the
//! leading dimension as the batch: a batch of `n` inputs to a layer with
//! `in_dim` inputs is an `n x in_dim` [`Matrix`]. Gradients are summed over the
//! batch; the loss functions in [`crate::loss`] already carry the `1/n` factor.

mod check;
mod mlp;
mod optim;

pub use check::{central_difference, finite_difference_check, max_relative_error};
pub use mlp::{MlpTrace, mlp_backward, mlp_forward};
pub use optim::{OptimizerKind, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Row-major dense matrix of finite `f64` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl TryFrom<RawMatrix> for Matrix {
    type Error = Error;

    fn try_from(raw: RawMatrix) -> Result<Self> {
        Matrix::new(raw.rows, raw.cols, raw.values)
    }
}

impl Matrix {
    /// Validating constructor: dimensions must be positive, the buffer length
    /// must equal `rows * cols`, and every value must be finite.
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Argument(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if values.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::new",
                format!("{} values for {rows}x{cols}", rows * cols),
                format!("{} values", values.len()),
            ));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                block: format!("matrix entry ({}, {})", pos / cols, pos % cols),
            });
        }
        Ok(Matrix { rows, cols, values })
    }

    /// Builds a matrix from nested rows, e.g. `from_rows(&[[2., 3.], [5., 7.]])`.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut values = Vec::with_capacity(n * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(
                    "Matrix::from_rows",
                    format!("{cols} columns"),
                    format!("{} columns in row {i}", r.len()),
                ));
            }
            values.extend_from_slice(r);
        }
        Matrix::new(n, cols, values)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            values: vec![value; rows * cols],
        }
    }

    /// Unchecked constructor for kernel-internal results.
    pub(crate) fn from_raw(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), rows * cols);
        Matrix { rows, cols, values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.values[row * self.cols + col] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.cols.max(1))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// New matrix holding the given rows, in order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut values = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Matrix::from_raw(indices.len(), self.cols, values)
    }

    /// Sub-matrix with the given rows and columns, in order.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Matrix {
        let mut values = Vec::with_capacity(rows.len() * cols.len());
        for &i in rows {
            let r = self.row(i);
            values.extend(cols.iter().map(|&j| r[j]));
        }
        Matrix::from_raw(rows.len(), cols.len(), values)
    }

    /// Column sums.
    pub fn sum_rows(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in self.row_iter() {
            for (o, v) in out.iter_mut().zip(r) {
                *o += v;
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `c = a * b^T` where `a` is `n x k` and `b` is `m x k`.
pub(crate) fn matmul_nt(a: &Matrix, b: &Matrix) -> Matrix {
    debug_assert_eq!(a.cols, b.cols);
    let (n, k, m) = (a.rows, a.cols, b.rows);
    let mut c = vec![0.0; n * m];
    // SAFETY: pointers and strides describe the live buffers above exactly.
    unsafe {
        matrixmultiply::dgemm(
            n, k, m, 1.0,
            a.values.as_ptr(), k as isize, 1,
            b.values.as_ptr(), 1, k as isize,
            0.0,
            c.as_mut_ptr(), m as isize, 1,
        );
    }
    Matrix::from_raw(n, m, c)
}

/// `c = a^T * b` where `a` is `n x m` and `b` is `n x k`.
pub(crate) fn matmul_tn(a: &Matrix, b: &Matrix) -> Matrix {
    debug_assert_eq!(a.rows, b.rows);
    let (n, m, k) = (a.rows, a.cols, b.cols);
    let mut c = vec![0.0; m * k];
    // SAFETY: see matmul_nt.
    unsafe {
        matrixmultiply::dgemm(
            m, n, k, 1.0,
            a.values.as_ptr(), 1, m as isize,
            b.values.as_ptr(), k as isize, 1,
            0.0,
            c.as_mut_ptr(), k as isize, 1,
        );
    }
    Matrix::from_raw(m, k, c)
}

/// `c = a * b` where `a` is `n x m` and `b` is `m x k`.
pub(crate) fn matmul_nn(a: &Matrix, b: &Matrix) -> Matrix {
    debug_assert_eq!(a.cols, b.rows);
    let (n, m, k) = (a.rows, a.cols, b.cols);
    let mut c = vec![0.0; n * k];
    // SAFETY: see matmul_nt.
    unsafe {
        matrixmultiply::dgemm(
            n, m, k, 1.0,
            a.values.as_ptr(), m as isize, 1,
            b.values.as_ptr(), k as isize, 1,
            0.0,
            c.as_mut_ptr(), k as isize, 1,
        );
    }
    Matrix::from_raw(n, k, c)
}

/// Fully connected layer `z = W x + b` with `W` stored `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Parameter gradients of one [`DenseLayer`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weight.rows() != bias.len() {
            return Err(Error::shape(
                "DenseLayer::new",
                format!("bias of length {}", weight.rows()),
                format!("bias of length {}", bias.len()),
            ));
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite {
                block: "layer bias".into(),
            });
        }
        Ok(DenseLayer { weight, bias })
    }

    /// He-uniform weights, bound `sqrt(6 / fan_in)`, zero bias.
    pub fn he_uniform<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = (6.0 / in_dim as f64).sqrt();
        let values = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        DenseLayer {
            weight: Matrix::from_raw(out_dim, in_dim, values),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weight.rows() * self.weight.cols() + self.bias.len()
    }

    /// Single-sample forward.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim() {
            return Err(Error::shape("linear_forward", self.in_dim(), x.len()));
        }
        Ok(self
            .weight
            .row_iter()
            .zip(&self.bias)
            .map(|(w, b)| w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect())
    }

    /// Batched forward: `x` is `n x in_dim`, result is `n x out_dim`.
    pub fn forward_batch(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return Err(Error::shape(
                "linear_forward",
                format!("{} input columns", self.in_dim()),
                format!("{} input columns", x.cols()),
            ));
        }
        let mut z = matmul_nt(x, &self.weight);
        for r in 0..z.rows() {
            for (v, b) in z.row_mut(r).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(z)
    }

    /// Single-sample backward: returns parameter gradients and `dL/dx`.
    pub fn backward(&self, d_out: &[f64], x: &[f64]) -> Result<(LayerGrad, Vec<f64>)> {
        if d_out.len() != self.out_dim() {
            return Err(Error::shape("linear_backward", self.out_dim(), d_out.len()));
        }
        if x.len() != self.in_dim() {
            return Err(Error::shape("linear_backward", self.in_dim(), x.len()));
        }
        let mut dw = Vec::with_capacity(self.out_dim() * self.in_dim());
        for &d in d_out {
            dw.extend(x.iter().map(|xj| d * xj));
        }
        let mut dx = vec![0.0; self.in_dim()];
        for (w, &d) in self.weight.row_iter().zip(d_out) {
            for (o, w) in dx.iter_mut().zip(w) {
                *o += w * d;
            }
        }
        Ok((
            LayerGrad {
                weight: Matrix::from_raw(self.out_dim(), self.in_dim(), dw),
                bias: d_out.to_vec(),
            },
            dx,
        ))
    }

    /// Batched backward. `d_out` is `n x out_dim`, `x` is the `n x in_dim`
    /// input seen by the forward pass. Parameter gradients are summed over
    /// the batch; `dx` is only computed when requested.
    pub fn backward_batch(
        &self,
        d_out: &Matrix,
        x: &Matrix,
        need_dx: bool,
    ) -> Result<(LayerGrad, Option<Matrix>)> {
        let grad = self.param_grad_batch(d_out, x)?;
        let dx = need_dx.then(|| matmul_nn(d_out, &self.weight));
        Ok((grad, dx))
    }

    pub(crate) fn param_grad_batch(&self, d_out: &Matrix, x: &Matrix) -> Result<LayerGrad> {
        self.check_backward_shapes(d_out, x)?;
        Ok(LayerGrad {
            weight: matmul_tn(d_out, x),
            bias: d_out.sum_rows(),
        })
    }

    pub(crate) fn input_grad_batch(&self, d_out: &Matrix) -> Result<Matrix> {
        if d_out.cols() != self.out_dim() {
            return Err(Error::shape(
                "linear_backward",
                format!("{} gradient columns", self.out_dim()),
                format!("{} gradient columns", d_out.cols()),
            ));
        }
        Ok(matmul_nn(d_out, &self.weight))
    }

    fn check_backward_shapes(&self, d_out: &Matrix, x: &Matrix) -> Result<()> {
        if d_out.cols() != self.out_dim() || x.cols() != self.in_dim() || d_out.rows() != x.rows()
        {
            return Err(Error::shape(
                "linear_backward",
                format!("n x {} gradient with n x {} input", self.out_dim(), self.in_dim()),
                format!(
                    "{}x{} gradient with {}x{} input",
                    d_out.rows(),
                    d_out.cols(),
                    x.rows(),
                    x.cols()
                ),
            ));
        }
        Ok(())
    }
}

pub fn relu_forward(z: &[f64]) -> Vec<f64> {
    z.iter().map(|&v| v.max(0.0)).collect()
}

/// ReLU derivative with the subgradient at zero taken as 0.
pub fn relu_backward(d_a: &[f64], z: &[f64]) -> Result<Vec<f64>> {
    if d_a.len() != z.len() {
        return Err(Error::shape("relu_backward", z.len(), d_a.len()));
    }
    Ok(d_a
        .iter()
        .zip(z)
        .map(|(&d, &z)| if z > 0.0 { d } else { 0.0 })
        .collect())
}

pub(crate) fn relu_matrix(z: &Matrix) -> Matrix {
    Matrix::from_raw(z.rows(), z.cols(), relu_forward(z.as_slice()))
}

/// In-place `d *= [z > 0]`.
pub(crate) fn relu_mask_in_place(d: &mut Matrix, z: &Matrix) {
    debug_assert_eq!(d.shape(), z.shape());
    for (d, &z) in d.as_mut_slice().iter_mut().zip(z.as_slice()) {
        if z <= 0.0 {
            *d = 0.0;
        }
    }
}
