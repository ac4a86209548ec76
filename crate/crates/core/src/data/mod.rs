//! Tabular datasets: ingestion, splitting, normalization and batching.

mod csv_io;
mod synth;

pub use csv_io::{load_csv, save_csv, CsvOptions};
pub use synth::{make_separable_classification, make_teacher_student, TeacherSpec};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grad::Matrix;
use crate::loss::{Targets, Task};
use crate::seed;
use crate::{Error, Result};

/// Side information carried along with a dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    /// One-hot encoded source columns and their category order.
    #[serde(default)]
    pub categories: BTreeMap<String, Vec<String>>,
    /// Original class label of each class index.
    #[serde(default)]
    pub class_labels: Option<Vec<String>>,
    #[serde(default)]
    pub teacher: Option<TeacherSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    pub features: Matrix,
    pub targets: Targets,
    pub feature_names: Vec<String>,
    pub target_names: Vec<String>,
    pub meta: DatasetMeta,
    /// `(row, feature column)` cells that were missing in the source and are
    /// waiting for imputation. They hold 0.0 until then.
    pub missing: Vec<(usize, usize)>,
}

impl TabularDataset {
    pub fn new(features: Matrix, targets: Targets, feature_names: Vec<String>, target_names: Vec<String>) -> Result<Self> {
        if features.rows() != targets.len() {
            return Err(Error::shape("TabularDataset", features.rows(), targets.len()));
        }
        if feature_names.len() != features.cols() {
            return Err(Error::shape("feature names", features.cols(), feature_names.len()));
        }
        if !features.is_finite() {
            return Err(Error::Data("features contain non-finite values".into()));
        }
        match &targets {
            Targets::Regression(m) if !m.is_finite() => {
                return Err(Error::Data("targets contain non-finite values".into()))
            }
            Targets::Classification { labels, n_classes } => {
                if let Some(bad) = labels.iter().find(|&&l| l >= *n_classes) {
                    return Err(Error::Data(format!("class index {bad} >= {n_classes}")));
                }
            }
            _ => {}
        }
        Ok(TabularDataset {
            features,
            targets,
            feature_names,
            target_names,
            meta: DatasetMeta::default(),
            missing: Vec::new(),
        })
    }

    pub fn task(&self) -> Task {
        self.targets.task()
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.targets.output_dim()
    }

    pub fn n_classes(&self) -> Option<usize> {
        match &self.targets {
            Targets::Classification { n_classes, .. } => Some(*n_classes),
            Targets::Regression(_) => None,
        }
    }

    /// Copy of the given rows, in order.
    pub fn select_rows(&self, rows: &[usize]) -> TabularDataset {
        let missing = if self.missing.is_empty() {
            Vec::new()
        } else {
            let mut pos = vec![usize::MAX; self.len()];
            for (new, &old) in rows.iter().enumerate() {
                pos[old] = new;
            }
            let mut m: Vec<(usize, usize)> = self
                .missing
                .iter()
                .filter(|(r, _)| pos[*r] != usize::MAX)
                .map(|&(r, c)| (pos[r], c))
                .collect();
            m.sort_unstable();
            m
        };
        TabularDataset {
            features: self.features.select_rows(rows),
            targets: self.targets.select_rows(rows),
            feature_names: self.feature_names.clone(),
            target_names: self.target_names.clone(),
            meta: self.meta.clone(),
            missing,
        }
    }
}

/// Per-column standardization fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub feature_mean: Vec<f64>,
    /// Divisor per feature; 1.0 for (near-)constant columns.
    pub feature_scale: Vec<f64>,
    /// Empty for classification.
    pub target_mean: Vec<f64>,
    pub target_scale: Vec<f64>,
}

const MIN_STD: f64 = 1e-12;

fn column_stats(m: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = m.rows() as f64;
    let mean: Vec<f64> = m.sum_rows().into_iter().map(|s| s / n).collect();
    let mut var = vec![0.0; m.cols()];
    for row in m.row_iter() {
        for ((v, x), mu) in var.iter_mut().zip(row).zip(&mean) {
            *v += (x - mu) * (x - mu);
        }
    }
    let scale = var
        .into_iter()
        .map(|v| {
            let sd = (v / n).sqrt();
            if sd < MIN_STD {
                1.0
            } else {
                sd
            }
        })
        .collect();
    (mean, scale)
}

fn standardize(m: &Matrix, mean: &[f64], scale: &[f64]) -> Matrix {
    let mut out = m.clone();
    for i in 0..out.rows() {
        for ((v, mu), s) in out.row_mut(i).iter_mut().zip(mean).zip(scale) {
            *v = (*v - mu) / s;
        }
    }
    out
}

impl Normalizer {
    pub fn fit(train: &TabularDataset) -> Self {
        let (feature_mean, feature_scale) = column_stats(&train.features);
        let (target_mean, target_scale) = match &train.targets {
            Targets::Regression(y) => column_stats(y),
            Targets::Classification { .. } => (Vec::new(), Vec::new()),
        };
        Normalizer {
            feature_mean,
            feature_scale,
            target_mean,
            target_scale,
        }
    }

    pub fn transform_features(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.feature_mean.len() {
            return Err(Error::shape("normalizer features", self.feature_mean.len(), x.cols()));
        }
        Ok(standardize(x, &self.feature_mean, &self.feature_scale))
    }

    pub fn transform(&self, data: &TabularDataset) -> Result<TabularDataset> {
        let features = self.transform_features(&data.features)?;
        let targets = match &data.targets {
            Targets::Regression(y) if !self.target_mean.is_empty() => {
                if y.cols() != self.target_mean.len() {
                    return Err(Error::shape("normalizer targets", self.target_mean.len(), y.cols()));
                }
                Targets::Regression(standardize(y, &self.target_mean, &self.target_scale))
            }
            t => t.clone(),
        };
        Ok(TabularDataset {
            features,
            targets,
            ..data.clone()
        })
    }

    /// Maps standardized regression outputs back to original units.
    pub fn denormalize_targets(&self, y: &Matrix) -> Matrix {
        if self.target_mean.is_empty() {
            return y.clone();
        }
        let mut out = y.clone();
        for i in 0..out.rows() {
            for ((v, mu), s) in out.row_mut(i).iter_mut().zip(&self.target_mean).zip(&self.target_scale) {
                *v = *v * s + mu;
            }
        }
        out
    }
}

/// Train / validation / test partition of one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: TabularDataset,
    pub valid: TabularDataset,
    pub test: TabularDataset,
    pub fractions: [f64; 3],
    pub split_seed: u64,
    /// Source row indices of each split.
    pub indices: [Vec<usize>; 3],
    /// Set once [`normalize`] has run.
    pub normalizer: Option<Normalizer>,
}

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.7, 0.15, 0.15];

/// Random permutation from `seed`, sliced into train/valid/test. Valid and
/// test sizes are `floor(n * fraction)`; train takes the remainder.
pub fn split(dataset: &TabularDataset, fractions: [f64; 3], seed: u64) -> Result<Splits> {
    if fractions.iter().any(|&f| !(f > 0.0 && f.is_finite())) {
        return Err(Error::Argument(format!("split fractions must be positive: {fractions:?}")));
    }
    if (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!("split fractions must sum to 1: {fractions:?}")));
    }
    let n = dataset.len();
    let n_valid = (n as f64 * fractions[1] + 1e-9).floor() as usize;
    let n_test = (n as f64 * fractions[2] + 1e-9).floor() as usize;
    let n_train = n.saturating_sub(n_valid + n_test);
    if n < 3 || n_valid == 0 || n_test == 0 || n_train == 0 {
        return Err(Error::Data(format!(
            "{n} rows are too few for non-empty splits with fractions {fractions:?}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train_idx = perm[..n_train].to_vec();
    let valid_idx = perm[n_train..n_train + n_valid].to_vec();
    let test_idx = perm[n_train + n_valid..].to_vec();
    Ok(Splits {
        train: dataset.select_rows(&train_idx),
        valid: dataset.select_rows(&valid_idx),
        test: dataset.select_rows(&test_idx),
        fractions,
        split_seed: seed,
        indices: [train_idx, valid_idx, test_idx],
        normalizer: None,
    })
}

/// Fills missing cells with the train-split column mean (observed values only).
pub fn impute_missing(splits: &mut Splits) {
    let cols = splits.train.n_features();
    let mut sum = vec![0.0; cols];
    let mut count = vec![0usize; cols];
    let mut is_missing = vec![false; splits.train.len() * cols];
    for &(r, c) in &splits.train.missing {
        is_missing[r * cols + c] = true;
    }
    for r in 0..splits.train.len() {
        for c in 0..cols {
            if !is_missing[r * cols + c] {
                sum[c] += splits.train.features.get(r, c);
                count[c] += 1;
            }
        }
    }
    let mean: Vec<f64> = sum
        .iter()
        .zip(&count)
        .map(|(s, &k)| if k == 0 { 0.0 } else { s / k as f64 })
        .collect();
    for part in [&mut splits.train, &mut splits.valid, &mut splits.test] {
        for &(r, c) in &part.missing {
            part.features.set(r, c, mean[c]);
        }
        part.missing.clear();
    }
}

/// Z-scores features (and regression targets) with train-split statistics.
pub fn normalize(mut splits: Splits) -> Result<Splits> {
    if splits.train.is_empty() {
        return Err(Error::Data("cannot normalize with an empty train split".into()));
    }
    impute_missing(&mut splits);
    let norm = Normalizer::fit(&splits.train);
    Ok(Splits {
        train: norm.transform(&splits.train)?,
        valid: norm.transform(&splits.valid)?,
        test: norm.transform(&splits.test)?,
        normalizer: Some(norm),
        ..splits
    })
}

/// Row-index batches of an `n_rows` split for one epoch. The permutation is
/// seeded by `(shuffle_seed, epoch)`; the final short batch is kept.
pub fn batches(n_rows: usize, batch_size: usize, shuffle_seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Argument("batch size must be at least 1".into()));
    }
    let mut perm: Vec<usize> = (0..n_rows).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(shuffle_seed, epoch as u64));
    perm.shuffle(&mut rng);
    Ok(perm.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Materialized `(features, targets)` of a row batch.
pub fn gather(data: &TabularDataset, rows: &[usize]) -> (Matrix, Targets) {
    (data.features.select_rows(rows), data.targets.select_rows(rows))
}
