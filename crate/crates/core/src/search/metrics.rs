use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Normalizer, TabularDataset};
use crate::grad::Matrix;
use crate::loss::{accuracy, loss, Targets};
use crate::supernet::{Architecture, ParamConvention, SuperNet};
use crate::{Error, Result};

/// A model that can be evaluated.
#[derive(Debug, Clone, Copy)]
pub enum Model<'a> {
    /// Deterministic-mode SuperNet.
    SuperNet(&'a SuperNet),
    Architecture(&'a Architecture),
}

impl Model<'_> {
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        match self {
            Model::SuperNet(net) => net.predict_deterministic(x),
            Model::Architecture(arch) => arch.predict(x),
        }
    }

    /// The plain MLP this model computes.
    fn architecture(&self) -> Architecture {
        match self {
            Model::SuperNet(net) => net.extract_architecture(),
            Model::Architecture(arch) => (*arch).clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metrics {
    pub rows: usize,
    /// Training loss on the data as given (standardized targets).
    pub loss: f64,
    /// Mean squared error in original target units (regression only).
    pub mse: Option<f64>,
    pub accuracy: Option<f64>,
    pub params_hidden: u64,
    pub params_full: u64,
    pub hidden_widths: Vec<usize>,
    /// Wall time; excluded from serialized metrics so reports stay reproducible.
    #[serde(skip)]
    pub inference_seconds_per_1k: f64,
}

// Timing is noise; equality covers everything else.
impl PartialEq for Metrics {
    fn eq(&self, other: &Self) -> bool {
        self.rows == other.rows
            && self.loss == other.loss
            && self.mse == other.mse
            && self.accuracy == other.accuracy
            && self.params_hidden == other.params_hidden
            && self.params_full == other.params_full
            && self.hidden_widths == other.hidden_widths
    }
}

/// Metrics of `model` on `data`. With a normalizer, regression predictions
/// and targets are mapped back to original units for `mse`.
pub fn evaluate(model: Model<'_>, data: &TabularDataset, normalizer: Option<&Normalizer>) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty split".into()));
    }
    let arch = model.architecture();
    if data.n_features() != arch.space.input_dim {
        return Err(Error::shape("evaluate input", arch.space.input_dim, data.n_features()));
    }
    if data.output_dim() != arch.space.output_dim {
        return Err(Error::shape("evaluate output", arch.space.output_dim, data.output_dim()));
    }
    let started = Instant::now();
    let pred = model.predict(&data.features)?;
    let elapsed = started.elapsed().as_secs_f64();
    let task_loss = loss(&pred, &data.targets)?;
    let (mse, acc) = match &data.targets {
        Targets::Regression(y) => {
            let (p, t) = match normalizer {
                Some(n) => (n.denormalize_targets(&pred), n.denormalize_targets(y)),
                None => (pred.clone(), y.clone()),
            };
            let se: f64 = p.as_slice().iter().zip(t.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum();
            (Some(se / p.as_slice().len() as f64), None)
        }
        Targets::Classification { labels, .. } => (None, Some(accuracy(&pred, labels)?)),
    };
    Ok(Metrics {
        rows: data.len(),
        loss: task_loss,
        mse,
        accuracy: acc,
        params_hidden: arch.param_count(ParamConvention::Hidden),
        params_full: arch.param_count(ParamConvention::Full),
        hidden_widths: arch.hidden_widths(),
        inference_seconds_per_1k: elapsed * 1000.0 / data.len() as f64,
    })
}
