//! Run artifacts: the report document, history CSV, timings and dataset
//! metadata. Everything except `timings.json` is a pure function of the
//! resolved config and seed, so repeated runs produce identical bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use crate::data::{DatasetMeta, Normalizer, Splits, TabularDataset};
use crate::loss::Task;
use crate::search::{EpochRecord, Metrics, TrialRecord};
use crate::seed::RunSeeds;
use crate::{Error, Result};

pub const REPORT_FORMAT: &str = "tabgns-report/1";
pub const REPORT_FILE: &str = "report.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const FINETUNE_HISTORY_FILE: &str = "finetune_history.csv";
pub const CONFIG_FILE: &str = "config.resolved";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const SUPERNET_FILE: &str = "supernet.ckpt";
pub const META_FILE: &str = "dataset.meta";
pub const TIMINGS_FILE: &str = "timings.json";

pub const HISTORY_COLUMNS: [&str; 5] = ["epoch", "train_loss", "valid_loss", "expected_size", "open_count"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format: String,
    pub method: String,
    pub config: ExperimentConfig,
    /// Git-style (`blob <len>\0<bytes>`) SHA-256 of the resolved config and
    /// the dataset contents.
    pub input_hash: String,
    pub seeds: RunSeeds,
    pub history_file: String,
    pub epochs: usize,
    pub best_epoch: Option<usize>,
    pub finetune_epochs_run: usize,
    pub hidden_widths: Vec<usize>,
    pub neurons: usize,
    pub test: Metrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid: Option<Metrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<Metrics>,
    #[serde(default)]
    pub clip_events: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trials: Vec<TrialRecord>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Reads `dir/report.json`; any missing or malformed piece is a schema error.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(REPORT_FILE);
        let schema = |message: String| Error::Schema {
            path: path.clone(),
            message,
        };
        let text = fs::read_to_string(&path).map_err(|e| schema(e.to_string()))?;
        let report: RunReport = serde_json::from_str(&text).map_err(|e| schema(e.to_string()))?;
        if report.format != REPORT_FORMAT {
            return Err(schema(format!("unsupported format '{}'", report.format)));
        }
        Ok(report)
    }

    /// The headline metric: test MSE in original units, or test accuracy.
    pub fn metric(&self) -> (&'static str, f64) {
        match (self.test.mse, self.test.accuracy) {
            (Some(m), _) => ("mse", m),
            (None, Some(a)) => ("accuracy", a),
            (None, None) => ("loss", self.test.loss),
        }
    }
}

/// Wall-clock measurements, kept apart from the reproducible report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub search_seconds: f64,
    pub finetune_seconds: f64,
    pub total_seconds: f64,
    pub inference_seconds_per_1k: f64,
    /// Seconds since start at the end of each history epoch.
    pub epoch_wall_seconds: Vec<f64>,
}

impl Timings {
    pub fn load(dir: &Path) -> Option<Self> {
        let text = fs::read_to_string(dir.join(TIMINGS_FILE)).ok()?;
        serde_json::from_str(&text).ok()
    }
}

/// Metadata sidecar written next to every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub rows: usize,
    pub task: Task,
    pub feature_names: Vec<String>,
    pub target_names: Vec<String>,
    pub split_sizes: [usize; 3],
    pub split_seed: u64,
    pub normalizer: Option<Normalizer>,
    pub meta: DatasetMeta,
}

impl DatasetSidecar {
    pub fn new(dataset: &TabularDataset, splits: &Splits) -> Self {
        DatasetSidecar {
            rows: dataset.len(),
            task: dataset.task(),
            feature_names: dataset.feature_names.clone(),
            target_names: dataset.target_names.clone(),
            split_sizes: [splits.train.len(), splits.valid.len(), splits.test.len()],
            split_seed: splits.split_seed,
            normalizer: splits.normalizer.clone(),
            meta: dataset.meta.clone(),
        }
    }
}

fn git_blob_update(hasher: &mut Sha256, bytes: &[u8]) {
    hasher.update(format!("blob {}\0", bytes.len()).as_bytes());
    hasher.update(bytes);
}

/// Content hash of a run's inputs: the resolved config plus the dataset
/// (its features and targets as shortest round-trip text).
pub fn input_hash(config_text: &str, dataset: &TabularDataset) -> String {
    let mut hasher = Sha256::new();
    git_blob_update(&mut hasher, config_text.as_bytes());
    let mut data = String::new();
    for (i, row) in dataset.features.row_iter().enumerate() {
        for v in row {
            data.push_str(&v.to_string());
            data.push(',');
        }
        match &dataset.targets {
            crate::loss::Targets::Regression(y) => {
                for v in y.row(i) {
                    data.push_str(&v.to_string());
                    data.push(',');
                }
            }
            crate::loss::Targets::Classification { labels, .. } => data.push_str(&labels[i].to_string()),
        }
        data.push('\n');
    }
    git_blob_update(&mut hasher, data.as_bytes());
    hex::encode(hasher.finalize())
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HISTORY_COLUMNS).expect("in-memory write");
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.valid_loss.to_string(),
            r.expected_size.to_string(),
            r.open_count.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

/// One parsed history row.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub expected_size: f64,
    pub open_count: usize,
}

pub fn read_history(path: &Path) -> Result<Vec<HistoryRow>> {
    let schema = |message: String| Error::Schema {
        path: path.to_path_buf(),
        message,
    };
    let mut r = csv::Reader::from_path(path).map_err(|e| schema(e.to_string()))?;
    let headers: Vec<String> = r
        .headers()
        .map_err(|e| schema(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers != HISTORY_COLUMNS {
        return Err(schema(format!("expected columns {HISTORY_COLUMNS:?}, found {headers:?}")));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| schema(e.to_string()))?;
        let f = |i: usize| -> Result<f64> { rec[i].parse().map_err(|e| schema(format!("{}: {e}", HISTORY_COLUMNS[i]))) };
        let u = |i: usize| -> Result<usize> { rec[i].parse().map_err(|e| schema(format!("{}: {e}", HISTORY_COLUMNS[i]))) };
        rows.push(HistoryRow {
            epoch: u(0)?,
            train_loss: f(1)?,
            valid_loss: f(2)?,
            expected_size: f(3)?,
            open_count: u(4)?,
        });
    }
    Ok(rows)
}

pub(crate) fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}
