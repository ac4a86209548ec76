//! Command-line front end.
//!
//! ```text
//! tabgns search|baseline [--config FILE] [--seed N] [--out DIR] [--section.key=value ...]
//! tabgns evaluate --checkpoint FILE [--config FILE] [--split test] [--out DIR] [--section.key=value ...]
//! tabgns report DIR... [--out DIR]
//! ```
//!
//! Exit codes: 0 success, 1 i/o or internal state, 2 usage or config,
//! 3 data/parse/shape, 4 numeric divergence, 5 checkpoint integrity,
//! 6 report schema.

pub mod commands;
pub mod config;
pub mod report;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use commands::{cmd_baseline, cmd_evaluate, cmd_report, cmd_search, EvalSplit, RunOutcome};
pub use config::{DataSource, ExperimentConfig, Method};
pub use report::{RunReport, Timings};

use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "tabgns", version, about = "Gated neuron selection for tabular MLPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Search, extract, fine-tune and evaluate.
    Search(RunArgs),
    /// Train the large-MLP or random-search baseline.
    Baseline(RunArgs),
    /// Evaluate a stored model.
    Evaluate(EvalArgs),
    /// Compare finished runs and export plot data.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config's method.
    #[arg(long, value_enum)]
    method: Option<Method>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Defaults to the `config.resolved` next to the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "test")]
    split: EvalSplit,
    /// Directory for `metrics.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    dirs: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn resolve(file: Option<&Path>, overrides: &[String], seed: Option<u64>, out: Option<PathBuf>) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::resolve(file, overrides)?;
    if let Some(s) = seed {
        config.search.seed = s;
    }
    if out.is_some() {
        config.out = out;
    }
    config.validate()?;
    Ok(config)
}

fn dispatch(cli: Cli, overrides: &[String]) -> Result<()> {
    match cli.command {
        Command::Search(a) => {
            let mut config = resolve(a.config.as_deref(), overrides, a.seed, a.out)?;
            config.method = a.method.unwrap_or(config.method);
            summarize(&cmd_search(&config)?);
        }
        Command::Baseline(a) => {
            let mut config = resolve(a.config.as_deref(), overrides, a.seed, a.out)?;
            config.method = a.method.unwrap_or(config.method);
            summarize(&cmd_baseline(&config)?);
        }
        Command::Evaluate(a) => {
            let default_config = a.checkpoint.parent().map(|d| d.join(report::CONFIG_FILE));
            let file = a.config.clone().or(default_config.filter(|p| p.exists()));
            let mut config = resolve(file.as_deref(), overrides, a.seed, None)?;
            config.out = a.out;
            let r = cmd_evaluate(&a.checkpoint, &config, a.split)?;
            println!("{}", serde_json::to_string_pretty(&r).expect("serializable"));
        }
        Command::Report(a) => {
            if !overrides.is_empty() {
                return Err(Error::Config("report takes no config overrides".into()));
            }
            let r = cmd_report(&a.dirs, a.out.as_deref())?;
            print!("{}", r.table);
        }
    }
    Ok(())
}

fn summarize(run: &RunOutcome) {
    let (metric, value) = run.report.metric();
    println!(
        "{}: widths {:?}, test {metric} {value:.6}, {} hidden / {} full params, {:.1}s -> {}",
        run.report.method,
        run.report.hidden_widths,
        run.report.test.params_hidden,
        run.report.test.params_full,
        run.timings.total_seconds,
        run.out.display()
    );
}

/// Runs the command line `args` (program name first) and returns the exit code.
pub fn run<I: IntoIterator<Item = String>>(args: I) -> i32 {
    let (overrides, rest) = config::extract_overrides(args.into_iter().collect());
    let cli = match Cli::try_parse_from(rest) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli, &overrides) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
