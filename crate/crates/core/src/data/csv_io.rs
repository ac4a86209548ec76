use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetMeta, TabularDataset};
use crate::grad::Matrix;
use crate::loss::{Targets, Task};
use crate::{Error, Result};

/// How a CSV file maps onto a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvOptions {
    /// Target columns, by header name or zero-based index.
    pub targets: Vec<String>,
    pub task: Task,
    /// Columns to one-hot encode.
    #[serde(default)]
    pub categorical: Vec<String>,
    /// Replace missing feature cells with the train mean instead of failing.
    #[serde(default)]
    pub impute_mean: bool,
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || ["na", "nan", "null", "none", "?"].iter().any(|m| c.eq_ignore_ascii_case(m))
}

fn resolve_column(headers: &[String], column: &str) -> Result<usize> {
    if let Some(i) = headers.iter().position(|h| h == column) {
        return Ok(i);
    }
    match column.parse::<usize>() {
        Ok(i) if i < headers.len() => Ok(i),
        _ => Err(Error::Config(format!("unknown column '{column}'"))),
    }
}

enum ColumnKind {
    Numeric,
    Categorical(Vec<String>),
}

/// Reads a headered, comma-delimited CSV file.
pub fn load_csv(path: impl AsRef<Path>, options: &CsvOptions) -> Result<TabularDataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut records = Vec::new();
    for rec in reader.records() {
        records.push(rec.map_err(|e| csv_error(path, e))?);
    }
    if records.is_empty() {
        return Err(Error::Data(format!("{} has no data rows", path.display())));
    }
    parse_records(&headers, &records, options)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
        _ => Error::Data(format!("{}: {e}", path.display())),
    }
}

fn parse_records(headers: &[String], records: &[csv::StringRecord], options: &CsvOptions) -> Result<TabularDataset> {
    if options.targets.is_empty() {
        return Err(Error::Config("at least one target column is required".into()));
    }
    let target_cols: Vec<usize> = options
        .targets
        .iter()
        .map(|t| resolve_column(headers, t))
        .collect::<Result<_>>()?;
    if options.task == Task::Classification && target_cols.len() != 1 {
        return Err(Error::Config("classification takes exactly one target column".into()));
    }
    let categorical: Vec<usize> = options
        .categorical
        .iter()
        .map(|c| resolve_column(headers, c))
        .collect::<Result<_>>()?;
    if let Some(c) = categorical.iter().find(|c| target_cols.contains(c)) {
        return Err(Error::Config(format!("column '{}' is both target and categorical", headers[*c])));
    }
    let feature_cols: Vec<usize> = (0..headers.len()).filter(|c| !target_cols.contains(c)).collect();
    if feature_cols.is_empty() {
        return Err(Error::Config("no feature columns left after removing targets".into()));
    }

    // Category order is first appearance.
    let mut kinds = Vec::with_capacity(feature_cols.len());
    for &c in &feature_cols {
        if categorical.contains(&c) {
            let mut cats: Vec<String> = Vec::new();
            for (r, rec) in records.iter().enumerate() {
                let v = rec[c].trim();
                if is_missing(v) {
                    return Err(Error::Data(format!(
                        "missing value at row {}, categorical column '{}'",
                        r + 1,
                        headers[c]
                    )));
                }
                if !cats.iter().any(|k| k == v) {
                    cats.push(v.to_string());
                }
            }
            kinds.push(ColumnKind::Categorical(cats));
        } else {
            kinds.push(ColumnKind::Numeric);
        }
    }

    let mut feature_names = Vec::new();
    let mut meta = DatasetMeta::default();
    for (&c, kind) in feature_cols.iter().zip(&kinds) {
        match kind {
            ColumnKind::Numeric => feature_names.push(headers[c].clone()),
            ColumnKind::Categorical(cats) => {
                feature_names.extend(cats.iter().map(|k| format!("{}={k}", headers[c])));
                meta.categories.insert(headers[c].clone(), cats.clone());
            }
        }
    }

    let width = feature_names.len();
    let mut values = Vec::with_capacity(records.len() * width);
    let mut missing = Vec::new();
    for (r, rec) in records.iter().enumerate() {
        for (&c, kind) in feature_cols.iter().zip(&kinds) {
            let cell = rec[c].trim();
            match kind {
                ColumnKind::Numeric => {
                    if is_missing(cell) {
                        if !options.impute_mean {
                            return Err(Error::Data(format!(
                                "missing value at row {}, column '{}' (set impute_mean to fill it)",
                                r + 1,
                                headers[c]
                            )));
                        }
                        missing.push((r, values.len() % width));
                        values.push(0.0);
                    } else {
                        values.push(parse_number(cell, r, &headers[c])?);
                    }
                }
                ColumnKind::Categorical(cats) => {
                    values.extend(cats.iter().map(|k| if k == cell { 1.0 } else { 0.0 }));
                }
            }
        }
    }
    let features = Matrix::new(records.len(), width, values)?;

    let target_names: Vec<String> = target_cols.iter().map(|&c| headers[c].clone()).collect();
    let targets = match options.task {
        Task::Regression => {
            let mut y = Vec::with_capacity(records.len() * target_cols.len());
            for (r, rec) in records.iter().enumerate() {
                for &c in &target_cols {
                    let cell = rec[c].trim();
                    if is_missing(cell) {
                        return Err(Error::Data(format!(
                            "missing target at row {}, column '{}'",
                            r + 1,
                            headers[c]
                        )));
                    }
                    y.push(parse_number(cell, r, &headers[c])?);
                }
            }
            Targets::Regression(Matrix::new(records.len(), target_cols.len(), y)?)
        }
        Task::Classification => {
            let c = target_cols[0];
            let raw: Vec<&str> = records.iter().map(|rec| rec[c].trim()).collect();
            if let Some(r) = raw.iter().position(|v| is_missing(v)) {
                return Err(Error::Data(format!(
                    "missing target at row {}, column '{}'",
                    r + 1,
                    headers[c]
                )));
            }
            let labels = class_order(&raw);
            let index: BTreeMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
            let ids = raw.iter().map(|v| index[v]).collect();
            let n_classes = labels.len();
            meta.class_labels = Some(labels);
            Targets::Classification { labels: ids, n_classes }
        }
    };

    let mut ds = TabularDataset::new(features, targets, feature_names, target_names)?;
    ds.meta = meta;
    ds.missing = missing;
    Ok(ds)
}

/// Numeric labels sort by value; anything else keeps first-appearance order.
fn class_order(raw: &[&str]) -> Vec<String> {
    let mut distinct: Vec<&str> = Vec::new();
    for v in raw {
        if !distinct.contains(v) {
            distinct.push(v);
        }
    }
    let numeric: Option<Vec<f64>> = distinct.iter().map(|v| v.parse::<f64>().ok()).collect();
    if let Some(nums) = numeric {
        let mut pairs: Vec<(f64, &str)> = nums.into_iter().zip(distinct.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        pairs.into_iter().map(|(_, s)| s.to_string()).collect()
    } else {
        distinct.into_iter().map(str::to_string).collect()
    }
}

fn parse_number(cell: &str, row: usize, column: &str) -> Result<f64> {
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Err(Error::Parse {
            row: row + 1,
            column: column.to_string(),
            message: format!("non-finite value '{cell}'"),
        }),
        Err(_) => Err(Error::Parse {
            row: row + 1,
            column: column.to_string(),
            message: format!("'{cell}' is not a number"),
        }),
    }
}

/// Writes features then targets, one header row, values in shortest
/// round-trip form. Missing cells are written empty.
pub fn save_csv(data: &TabularDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let header: Vec<&str> = data
        .feature_names
        .iter()
        .chain(&data.target_names)
        .map(String::as_str)
        .collect();
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    let mut missing = data.missing.iter().peekable();
    for r in 0..data.len() {
        let mut row: Vec<String> = Vec::with_capacity(header.len());
        for (c, v) in data.features.row(r).iter().enumerate() {
            if missing.peek() == Some(&&(r, c)) {
                missing.next();
                row.push(String::new());
            } else {
                row.push(v.to_string());
            }
        }
        match &data.targets {
            Targets::Regression(y) => row.extend(y.row(r).iter().map(f64::to_string)),
            Targets::Classification { labels, .. } => {
                let l = labels[r];
                row.push(match &data.meta.class_labels {
                    Some(names) => names[l].clone(),
                    None => l.to_string(),
                });
            }
        }
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
