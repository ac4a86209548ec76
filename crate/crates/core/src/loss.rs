//! Task losses. Regression uses mean squared error over batch and outputs;
//! classification uses mean softmax cross-entropy over the batch with raw
//! logits coming out of the network.

use serde::{Deserialize, Serialize};

use crate::grad::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    #[default]
    Regression,
    Classification,
}

/// Supervision for a batch of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Targets {
    Regression(Matrix),
    Classification { labels: Vec<usize>, n_classes: usize },
}

impl Targets {
    pub fn task(&self) -> Task {
        match self {
            Targets::Regression(_) => Task::Regression,
            Targets::Classification { .. } => Task::Classification,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Targets::Regression(m) => m.rows(),
            Targets::Classification { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Network output width needed for these targets.
    pub fn output_dim(&self) -> usize {
        match self {
            Targets::Regression(m) => m.cols(),
            Targets::Classification { n_classes, .. } => *n_classes,
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> Targets {
        match self {
            Targets::Regression(m) => Targets::Regression(m.select_rows(rows)),
            Targets::Classification { labels, n_classes } => Targets::Classification {
                labels: rows.iter().map(|&r| labels[r]).collect(),
                n_classes: *n_classes,
            },
        }
    }
}

fn check_rows(pred: &Matrix, targets: &Targets) -> Result<()> {
    if pred.rows() != targets.len() || pred.cols() != targets.output_dim() {
        return Err(Error::shape(
            "loss",
            format!("{}x{} predictions", targets.len(), targets.output_dim()),
            format!("{}x{}", pred.rows(), pred.cols()),
        ));
    }
    if let Targets::Classification { labels, n_classes } = targets {
        if let Some((row, &bad)) = labels.iter().enumerate().find(|(_, &l)| l >= *n_classes) {
            return Err(Error::Data(format!(
                "class index {bad} at row {row} is outside [0, {n_classes})"
            )));
        }
    }
    Ok(())
}

/// Scalar task loss.
pub fn loss(pred: &Matrix, targets: &Targets) -> Result<f64> {
    loss_with_grad(pred, targets, false).map(|(l, _)| l)
}

/// Task loss and its gradient with respect to the predictions.
pub fn loss_and_grad(pred: &Matrix, targets: &Targets) -> Result<(f64, Matrix)> {
    let (l, g) = loss_with_grad(pred, targets, true)?;
    Ok((l, g.expect("gradient requested")))
}

fn loss_with_grad(pred: &Matrix, targets: &Targets, want_grad: bool) -> Result<(f64, Option<Matrix>)> {
    check_rows(pred, targets)?;
    let n = pred.rows();
    if n == 0 {
        return Err(Error::Data("loss over an empty batch".into()));
    }
    match targets {
        Targets::Regression(y) => {
            let count = (n * pred.cols()) as f64;
            let mut total = 0.0;
            let mut grad = want_grad.then(|| Vec::with_capacity(n * pred.cols()));
            for (p, t) in pred.as_slice().iter().zip(y.as_slice()) {
                let d = p - t;
                total += d * d;
                if let Some(g) = grad.as_mut() {
                    g.push(2.0 * d / count);
                }
            }
            Ok((
                total / count,
                grad.map(|g| Matrix::from_raw(n, pred.cols(), g)),
            ))
        }
        Targets::Classification { labels, .. } => {
            let k = pred.cols();
            let mut total = 0.0;
            let mut grad = want_grad.then(|| Vec::with_capacity(n * k));
            for (row, &label) in pred.row_iter().zip(labels) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
                let log_z = max + sum.ln();
                total += log_z - row[label];
                if let Some(g) = grad.as_mut() {
                    for (j, v) in row.iter().enumerate() {
                        let p = (v - log_z).exp();
                        let onehot = if j == label { 1.0 } else { 0.0 };
                        g.push((p - onehot) / n as f64);
                    }
                }
            }
            Ok((total / n as f64, grad.map(|g| Matrix::from_raw(n, k, g))))
        }
    }
}

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
pub fn accuracy(pred: &Matrix, labels: &[usize]) -> Result<f64> {
    if pred.rows() != labels.len() {
        return Err(Error::shape("accuracy", labels.len(), pred.rows()));
    }
    if labels.is_empty() {
        return Err(Error::Data("accuracy over an empty batch".into()));
    }
    let hits = pred
        .row_iter()
        .zip(labels)
        .filter(|(row, &label)| argmax(row) == label)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}
