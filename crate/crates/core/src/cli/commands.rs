use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Method};
use super::report::*;
use crate::data::{impute_missing, split, Normalizer, Splits, TabularDataset};
use crate::search::{
    evaluate, finetune, random_search_baseline, search, train_fixed, EpochRecord, Metrics, Model, TrainOutcome,
};
use crate::supernet::{Architecture, Checkpoint, CheckpointModel};
use crate::{Error, Result};

/// What a run command produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out: PathBuf,
    pub report: RunReport,
    pub timings: Timings,
}

struct Prepared {
    config: ExperimentConfig,
    config_text: String,
    dataset: TabularDataset,
    splits: Splits,
    out: PathBuf,
}

fn prepare(config: &ExperimentConfig, method: Method) -> Result<Prepared> {
    config.validate()?;
    let out = config.out_dir()?.to_path_buf();
    let mut config = config.clone();
    config.method = method;
    let dataset = config.load_dataset()?;
    let splits = config.prepare(&dataset)?;
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let config_text = config.to_toml();
    Ok(Prepared {
        config,
        config_text,
        dataset,
        splits,
        out,
    })
}

struct Finished<'a> {
    epochs: usize,
    best_epoch: Option<usize>,
    history: &'a [EpochRecord],
    finetune_history: Option<&'a [EpochRecord]>,
    model: &'a Architecture,
    supernet: Option<CheckpointModel>,
    clip_events: usize,
    trials: Vec<crate::search::TrialRecord>,
    timings: Timings,
}

fn finish(p: &Prepared, f: Finished<'_>) -> Result<RunOutcome> {
    let norm = p.splits.normalizer.as_ref();
    let test = evaluate(Model::Architecture(f.model), &p.splits.test, norm)?;
    let (train, valid) = if p.config.report.all_splits {
        (
            Some(evaluate(Model::Architecture(f.model), &p.splits.train, norm)?),
            Some(evaluate(Model::Architecture(f.model), &p.splits.valid, norm)?),
        )
    } else {
        (None, None)
    };
    // the output location is not an input of the run
    let mut reported = p.config.clone();
    reported.out = None;
    let report = RunReport {
        format: REPORT_FORMAT.to_string(),
        method: p.config.method.name().to_string(),
        input_hash: input_hash(&reported.to_toml(), &p.dataset),
        config: reported,
        seeds: p.config.seeds(),
        history_file: HISTORY_FILE.to_string(),
        epochs: f.epochs,
        best_epoch: f.best_epoch,
        finetune_epochs_run: f.finetune_history.map_or(0, <[_]>::len),
        hidden_widths: f.model.hidden_widths(),
        neurons: f.model.neuron_count(),
        test: test.clone(),
        valid,
        train,
        clip_events: f.clip_events,
        trials: f.trials,
    };
    let timings = Timings {
        inference_seconds_per_1k: test.inference_seconds_per_1k,
        epoch_wall_seconds: f.history.iter().map(|r| r.wall_seconds).collect(),
        ..f.timings
    };
    let out = &p.out;
    let seed = p.config.search.seed;
    write(&out.join(CONFIG_FILE), &p.config_text)?;
    write(&out.join(REPORT_FILE), report.to_json())?;
    write(&out.join(HISTORY_FILE), history_csv(f.history))?;
    if let Some(h) = f.finetune_history {
        write(&out.join(FINETUNE_HISTORY_FILE), history_csv(h))?;
    }
    Checkpoint::new(seed, CheckpointModel::Architecture(f.model.clone()), p.splits.normalizer.clone())
        .save(out.join(CHECKPOINT_FILE))?;
    if let (Some(net), true) = (f.supernet, p.config.report.save_supernet) {
        Checkpoint::new(seed, net, p.splits.normalizer.clone()).save(out.join(SUPERNET_FILE))?;
    }
    let sidecar = DatasetSidecar::new(&p.dataset, &p.splits);
    write(&out.join(META_FILE), json(&sidecar))?;
    write(&out.join(TIMINGS_FILE), json(&timings))?;
    Ok(RunOutcome {
        out: out.clone(),
        report,
        timings,
    })
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

/// search -> extract -> fine-tune -> evaluate, writing every run artifact.
pub fn cmd_search(config: &ExperimentConfig) -> Result<RunOutcome> {
    if config.method != Method::Tabgns {
        return Err(Error::Config(format!(
            "the search command runs method 'tabgns', config says '{}' (use the baseline command)",
            config.method.name()
        )));
    }
    let p = prepare(config, Method::Tabgns)?;
    let space = p.config.space_for(&p.dataset)?;
    let started = Instant::now();
    let result = search(&p.splits, space, &p.config.search)?;
    let tuned = finetune(result.architecture.clone(), &p.splits, &p.config.search)?;
    let timings = Timings {
        search_seconds: result.search_seconds,
        finetune_seconds: tuned.train_seconds,
        total_seconds: started.elapsed().as_secs_f64(),
        ..Timings::default()
    };
    finish(
        &p,
        Finished {
            epochs: result.history.len(),
            best_epoch: Some(result.best_epoch),
            history: &result.history,
            finetune_history: Some(&tuned.history),
            model: &tuned.architecture,
            supernet: Some(CheckpointModel::SuperNet(result.supernet.clone())),
            clip_events: result.clip_events + tuned.clip_events,
            trials: Vec::new(),
            timings,
        },
    )
}

/// Large-MLP or random-search baseline, with the same artifacts as a search.
pub fn cmd_baseline(config: &ExperimentConfig) -> Result<RunOutcome> {
    let method = config.method;
    if method == Method::Tabgns {
        return Err(Error::Config(
            "the baseline command needs method = \"large-mlp\" or \"random-search\"".into(),
        ));
    }
    let p = prepare(config, method)?;
    let space = p.config.space_for(&p.dataset)?;
    let started = Instant::now();
    let (outcome, trials): (TrainOutcome, _) = match method {
        Method::LargeMlp => {
            let widths = if p.config.baseline.widths.is_empty() {
                vec![space.max_width; space.hidden_layers]
            } else {
                p.config.baseline.widths.clone()
            };
            (train_fixed(space, &widths, &p.splits, &p.config.search)?, Vec::new())
        }
        Method::RandomSearch => {
            let r = random_search_baseline(space, &p.splits, &p.config.search, p.config.baseline.trials)?;
            (r.retrained, r.trials)
        }
        Method::Tabgns => unreachable!("rejected above"),
    };
    let elapsed = started.elapsed().as_secs_f64();
    let timings = Timings {
        search_seconds: elapsed,
        total_seconds: elapsed,
        ..Timings::default()
    };
    finish(
        &p,
        Finished {
            epochs: outcome.history.len(),
            best_epoch: outcome.best_epoch,
            history: &outcome.history,
            finetune_history: None,
            model: &outcome.architecture,
            supernet: None,
            clip_events: outcome.clip_events,
            trials,
            timings,
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EvalSplit {
    Train,
    Valid,
    Test,
    /// The whole dataset.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint: String,
    pub split: EvalSplit,
    pub metrics: Metrics,
}

fn apply_normalizer(norm: Option<&Normalizer>, data: &TabularDataset) -> Result<TabularDataset> {
    match norm {
        Some(n) => n.transform(data),
        None => Ok(data.clone()),
    }
}

/// Metrics of a stored model on the configured data. The split is rebuilt
/// from the config seed and normalized with the checkpoint's statistics, so
/// the original test split reproduces the run report.
pub fn cmd_evaluate(checkpoint: &Path, config: &ExperimentConfig, which: EvalSplit) -> Result<EvalReport> {
    let ck = Checkpoint::load(checkpoint)?;
    let dataset = config.load_dataset()?;
    let norm = ck.normalizer.as_ref();
    let data = match which {
        EvalSplit::All => {
            if !dataset.missing.is_empty() {
                return Err(Error::Data("missing values cannot be imputed without a train split".into()));
            }
            apply_normalizer(norm, &dataset)?
        }
        _ => {
            let mut s = split(&dataset, config.fractions()?, config.seeds().split)?;
            impute_missing(&mut s);
            let part = match which {
                EvalSplit::Train => &s.train,
                EvalSplit::Valid => &s.valid,
                _ => &s.test,
            };
            apply_normalizer(norm, part)?
        }
    };
    let metrics = match &ck.model {
        CheckpointModel::SuperNet(net) => evaluate(Model::SuperNet(net), &data, norm)?,
        CheckpointModel::Architecture(arch) => evaluate(Model::Architecture(arch), &data, norm)?,
    };
    let report = EvalReport {
        checkpoint: checkpoint.display().to_string(),
        split: which,
        metrics,
    };
    if let Some(out) = &config.out {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        write(&out.join("metrics.json"), json(&report))?;
    }
    Ok(report)
}

/// One line of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub run: String,
    pub method: String,
    pub seed: u64,
    pub gate_init: f64,
    pub metric: String,
    pub value: f64,
    pub params_hidden: u64,
    pub params_full: u64,
    pub neurons: usize,
    pub widths: String,
    /// `None` when the run directory has no timings.
    pub search_seconds: Option<f64>,
}

/// Summary of the runs sharing a method and gate initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub gate_init: f64,
    pub runs: usize,
    pub median_neurons: f64,
    pub median_params_hidden: f64,
    pub metric: String,
    pub median_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutcome {
    pub rows: Vec<ComparisonRow>,
    pub sweep: Vec<SweepRow>,
    /// `(run, epoch, expected_size, open_count)` for size-over-epoch plots.
    pub size_series: Vec<(String, usize, f64, usize)>,
    pub table: String,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn run_name(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

fn aligned(rows: &[ComparisonRow]) -> String {
    let header = ["run", "method", "seed", "gate_init", "metric", "value", "params_hidden", "params_full", "widths", "search_s"];
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.run.clone(),
                r.method.clone(),
                r.seed.to_string(),
                r.gate_init.to_string(),
                r.metric.clone(),
                format!("{:.6}", r.value),
                r.params_hidden.to_string(),
                r.params_full.to_string(),
                r.widths.clone(),
                r.search_seconds.map_or("-".into(), |s| format!("{s:.2}")),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| cells.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let mut line = |cols: Vec<&str>| {
        let parts: Vec<String> = cols.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(header.to_vec());
    for r in &cells {
        line(r.iter().map(String::as_str).collect());
    }
    out
}

fn csv_text<T: Serialize>(rows: &[T], header_if_empty: &[&str]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(header_if_empty).expect("in-memory write");
    }
    for r in rows {
        w.serialize(r).map_err(|e| Error::State(format!("csv serialization: {e}")))?;
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8"))
}

/// Comparison table, size-over-epoch series and gate-init sweep summary for
/// a set of run directories. Files are written to `out` when given.
pub fn cmd_report(dirs: &[PathBuf], out: Option<&Path>) -> Result<ReportOutcome> {
    if dirs.is_empty() {
        return Err(Error::Config("report needs at least one run directory".into()));
    }
    let mut rows = Vec::new();
    let mut size_series = Vec::new();
    for dir in dirs {
        let report = RunReport::load(dir)?;
        let history = read_history(&dir.join(&report.history_file))?;
        let name = run_name(dir);
        for h in &history {
            size_series.push((name.clone(), h.epoch, h.expected_size, h.open_count));
        }
        let (metric, value) = report.metric();
        rows.push(ComparisonRow {
            run: name,
            method: report.method.clone(),
            seed: report.seeds.root,
            gate_init: report.config.search.gate_init,
            metric: metric.to_string(),
            value,
            params_hidden: report.test.params_hidden,
            params_full: report.test.params_full,
            neurons: report.neurons,
            widths: report.hidden_widths.iter().map(usize::to_string).collect::<Vec<_>>().join("x"),
            search_seconds: Timings::load(dir).map(|t| t.search_seconds),
        });
    }

    let mut groups: BTreeMap<(String, String), Vec<&ComparisonRow>> = BTreeMap::new();
    for r in &rows {
        // f64 keys: group on the exact text, sort numerically below
        groups.entry((r.method.clone(), r.gate_init.to_string())).or_default().push(r);
    }
    let mut sweep: Vec<SweepRow> = groups
        .into_values()
        .map(|g| SweepRow {
            method: g[0].method.clone(),
            gate_init: g[0].gate_init,
            runs: g.len(),
            median_neurons: median(&mut g.iter().map(|r| r.neurons as f64).collect::<Vec<_>>()),
            median_params_hidden: median(&mut g.iter().map(|r| r.params_hidden as f64).collect::<Vec<_>>()),
            metric: g[0].metric.clone(),
            median_value: median(&mut g.iter().map(|r| r.value).collect::<Vec<_>>()),
        })
        .collect();
    sweep.sort_by(|a, b| a.method.cmp(&b.method).then(a.gate_init.total_cmp(&b.gate_init)));

    let table = aligned(&rows);
    if let Some(out) = out {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        write(&out.join("comparison.csv"), csv_text(&rows, &[])?)?;
        write(&out.join("comparison.txt"), &table)?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["run", "epoch", "expected_size", "open_count"]).expect("in-memory write");
        for (run, epoch, size, open) in &size_series {
            w.write_record([run.clone(), epoch.to_string(), size.to_string(), open.to_string()])
                .expect("in-memory write");
        }
        write(&out.join("size_series.csv"), w.into_inner().expect("in-memory flush"))?;
        write(&out.join("gate_init_sweep.csv"), csv_text(&sweep, &[])?)?;
    }
    Ok(ReportOutcome {
        rows,
        sweep,
        size_series,
        table,
    })
}
