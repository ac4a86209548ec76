//! Experiment configuration: a TOML document with defaults for everything
//! but the data source and the output directory, plus `--section.key=value`
//! command-line overrides. Flags win over the file, the file over defaults.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    load_csv, make_separable_classification, make_teacher_student, normalize, split, CsvOptions, Splits,
    TabularDataset, DEFAULT_FRACTIONS,
};
use crate::loss::Task;
use crate::search::SearchConfig;
use crate::seed::RunSeeds;
use crate::supernet::SearchSpace;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    Tabgns,
    LargeMlp,
    RandomSearch,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Tabgns => "tabgns",
            Method::LargeMlp => "large-mlp",
            Method::RandomSearch => "random-search",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    Csv {
        path: PathBuf,
        targets: Vec<String>,
        #[serde(default)]
        task: Task,
        #[serde(default)]
        categorical: Vec<String>,
        #[serde(default)]
        impute_mean: bool,
    },
    /// Regression data from a random ReLU teacher network.
    TeacherStudent {
        input_dim: usize,
        teacher_widths: Vec<usize>,
        rows: usize,
        #[serde(default)]
        noise_std: f64,
    },
    /// Two linearly separable classes.
    Separable {
        input_dim: usize,
        rows: usize,
        margin: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpaceConfig {
    pub hidden_layers: usize,
    pub max_width: usize,
}

impl Default for SpaceConfig {
    fn default() -> Self {
        SpaceConfig {
            hidden_layers: 5,
            max_width: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        let [train, valid, test] = DEFAULT_FRACTIONS;
        SplitConfig { train, valid, test }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Random-search trials.
    pub trials: usize,
    /// Hidden widths of the large MLP; empty means `[max_width; hidden_layers]`.
    pub widths: Vec<usize>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            trials: 10,
            widths: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Also evaluate on the train and validation splits.
    pub all_splits: bool,
    /// Write the best SuperNet next to the final model.
    pub save_supernet: bool,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            all_splits: false,
            save_supernet: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSource>,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub space: SpaceConfig,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default)]
    pub report: ReportConfig,
}

impl ExperimentConfig {
    pub fn with_data(data: DataSource) -> Self {
        ExperimentConfig {
            method: Method::default(),
            out: None,
            data: Some(data),
            split: SplitConfig::default(),
            space: SpaceConfig::default(),
            search: SearchConfig::default(),
            baseline: BaselineConfig::default(),
            report: ReportConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Reads `file` (if any), applies `overrides` (`section.key=value`) and
    /// validates the result.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = match file {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                text.parse()
                    .map_err(|e: toml::de::Error| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.search.validate()?;
        if self.search.seed > i64::MAX as u64 {
            return Err(Error::Config(format!("seed must be at most {}", i64::MAX)));
        }
        self.fractions()?;
        if self.baseline.trials == 0 {
            return Err(Error::Config("baseline.trials must be at least 1".into()));
        }
        if self.baseline.widths.contains(&0) {
            return Err(Error::Config("baseline.widths must be positive".into()));
        }
        if self.space.hidden_layers == 0 || self.space.max_width == 0 {
            return Err(Error::Config("space.hidden_layers and space.max_width must be at least 1".into()));
        }
        match &self.data {
            Some(DataSource::TeacherStudent {
                input_dim,
                teacher_widths,
                rows,
                noise_std,
            }) => {
                if *input_dim == 0 || *rows == 0 || teacher_widths.is_empty() || teacher_widths.contains(&0) {
                    return Err(Error::Config("teacher-student data needs positive dims, rows and widths".into()));
                }
                if !(*noise_std >= 0.0 && noise_std.is_finite()) {
                    return Err(Error::Config("data.noise_std must be >= 0".into()));
                }
            }
            Some(DataSource::Separable { input_dim, rows, margin }) => {
                if *input_dim == 0 || *rows == 0 || !(*margin >= 0.0 && margin.is_finite()) {
                    return Err(Error::Config("separable data needs positive dims and rows, margin >= 0".into()));
                }
            }
            Some(DataSource::Csv { targets, .. }) if targets.is_empty() => {
                return Err(Error::Config("data.targets must name at least one column".into()));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn fractions(&self) -> Result<[f64; 3]> {
        let f = [self.split.train, self.split.valid, self.split.test];
        if f.iter().any(|&v| !(v > 0.0 && v.is_finite())) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions must be positive and sum to 1, got {f:?}")));
        }
        Ok(f)
    }

    pub fn seeds(&self) -> RunSeeds {
        self.search.seeds()
    }

    pub fn data_source(&self) -> Result<&DataSource> {
        self.data
            .as_ref()
            .ok_or_else(|| Error::Config("no data source configured (set [data] or --data.source=...)".into()))
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::Config("no output directory configured (use --out DIR)".into()))
    }

    /// Loads or generates the configured dataset.
    pub fn load_dataset(&self) -> Result<TabularDataset> {
        let seeds = self.seeds();
        match self.data_source()? {
            DataSource::Csv {
                path,
                targets,
                task,
                categorical,
                impute_mean,
            } => load_csv(
                path,
                &CsvOptions {
                    targets: targets.clone(),
                    task: *task,
                    categorical: categorical.clone(),
                    impute_mean: *impute_mean,
                },
            ),
            DataSource::TeacherStudent {
                input_dim,
                teacher_widths,
                rows,
                noise_std,
            } => make_teacher_student(*input_dim, teacher_widths, *rows, *noise_std, seeds.data),
            DataSource::Separable { input_dim, rows, margin } => {
                make_separable_classification(*input_dim, *rows, *margin, seeds.data)
            }
        }
    }

    /// Split and normalize `dataset` with the configured fractions and seed.
    pub fn prepare(&self, dataset: &TabularDataset) -> Result<Splits> {
        normalize(split(dataset, self.fractions()?, self.seeds().split)?)
    }

    /// Search space for `dataset`.
    pub fn space_for(&self, dataset: &TabularDataset) -> Result<SearchSpace> {
        SearchSpace::new(
            dataset.n_features(),
            dataset.output_dim(),
            self.space.hidden_layers,
            self.space.max_width,
            dataset.task(),
        )
    }
}

/// Applies one `section.key=value` override. The value is read as a TOML
/// value when it parses as one and as a plain string otherwise.
pub fn apply_override(table: &mut toml::Table, arg: &str) -> Result<()> {
    let arg = arg.strip_prefix("--").unwrap_or(arg);
    let (path, raw) = arg
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{arg}' is not of the form section.key=value")))?;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("bad override key '{path}'")));
    }
    let value = parse_value(raw);
    let (last, parents) = keys.split_last().expect("split yields one key");
    let mut node = table;
    for k in parents {
        let entry = node
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override '{path}': '{k}' is not a section")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Splits raw arguments into override flags (`--a.b=c`) and the rest.
pub fn extract_overrides(args: Vec<String>) -> (Vec<String>, Vec<String>) {
    args.into_iter().partition(|a| {
        a.strip_prefix("--")
            .and_then(|r| r.split_once('='))
            .is_some_and(|(k, _)| k.contains('.'))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gates::NoiseSharing;
    use crate::grad::OptimizerKind;
    use proptest::prelude::*;

    fn teacher() -> DataSource {
        DataSource::TeacherStudent {
            input_dim: 3,
            teacher_widths: vec![4],
            rows: 50,
            noise_std: 0.1,
        }
    }

    #[test]
    fn defaults_fill_everything_but_data_and_out() {
        let c = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(c.method, Method::Tabgns);
        assert_eq!(c.search, SearchConfig::default());
        assert_eq!((c.space.hidden_layers, c.space.max_width), (5, 512));
        assert!(c.data.is_none() && c.out.is_none());
        assert!(matches!(c.data_source(), Err(Error::Config(_))));
        assert!(matches!(c.out_dir(), Err(Error::Config(_))));
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.toml");
        fs::write(&file, "[search]\nlr_gates = 0.2\nmax_epochs = 7\n").unwrap();
        let c = ExperimentConfig::resolve(Some(&file), &["--search.max_epochs=3".into()]).unwrap();
        assert_eq!((c.search.lr_gates, c.search.max_epochs, c.search.patience), (0.2, 3, 20));
        let c = ExperimentConfig::resolve(
            None,
            &[
                "--data.source=teacher-student".into(),
                "--data.input_dim=4".into(),
                "--data.teacher_widths=[2, 2]".into(),
                "--data.rows=10".into(),
                "--search.optimizer=plain-sgd".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.search.optimizer, OptimizerKind::PlainSgd);
        assert!(matches!(c.data, Some(DataSource::TeacherStudent { input_dim: 4, .. })));
    }

    #[test]
    fn bad_configs_are_config_errors() {
        for o in ["--search.lr_weights=-1", "--search.bogus=1", "--split.train=0.9", "--nodot", "--search.seed=\"x\""] {
            let r = ExperimentConfig::resolve(None, &[o.to_string()]);
            assert!(matches!(r, Err(Error::Config(_))), "{o}: {r:?}");
        }
    }

    #[test]
    fn override_extraction() {
        let args = ["tabgns", "search", "--seed", "3", "--search.tau=2", "--out=x.y", "--a.b=c"];
        let (o, rest) = extract_overrides(args.iter().map(|s| s.to_string()).collect());
        assert_eq!(o, vec!["--search.tau=2", "--a.b=c"]);
        assert_eq!(rest, vec!["tabgns", "search", "--seed", "3", "--out=x.y"]);
    }

    fn finite() -> impl Strategy<Value = f64> {
        prop_oneof![-1e6f64..1e6, Just(1e-300), Just(-3.0), Just(1e300), Just(0.1)]
    }

    fn positive() -> impl Strategy<Value = f64> {
        prop_oneof![1e-9f64..10.0, Just(1e-300), Just(1e300)]
    }

    prop_compose! {
        fn search_config()(
            lr_weights in positive(), lr_gates in positive(), tau in positive(), gate_init in finite(),
            max_epochs in 1usize..1000, patience in 1usize..100, batch_size in 1usize..4096,
            finetune_epochs in 0usize..100, seed in 0..=i64::MAX as u64, sgd in any::<bool>(),
            per_sample in any::<bool>(), clip_norm in prop_oneof![Just(0.0), positive()],
        ) -> SearchConfig {
            SearchConfig {
                lr_weights, lr_gates, tau, gate_init, max_epochs, patience, batch_size, finetune_epochs, seed,
                optimizer: if sgd { OptimizerKind::PlainSgd } else { OptimizerKind::Adaptive },
                noise: if per_sample { NoiseSharing::PerSample } else { NoiseSharing::PerBatch },
                clip_norm,
            }
        }
    }

    fn data_source() -> impl Strategy<Value = Option<DataSource>> {
        prop_oneof![
            Just(None),
            ("[a-z/._]{1,12}", prop::collection::vec("[a-z0-9]{1,5}", 1..3), any::<bool>(), any::<bool>()).prop_map(
                |(path, targets, cls, impute)| Some(DataSource::Csv {
                    path: path.into(),
                    targets: targets.clone(),
                    task: if cls { Task::Classification } else { Task::Regression },
                    categorical: targets,
                    impute_mean: impute,
                })
            ),
            (1usize..50, prop::collection::vec(1usize..20, 1..4), 1usize..10_000, 0.0f64..2.0).prop_map(
                |(input_dim, teacher_widths, rows, noise_std)| Some(DataSource::TeacherStudent {
                    input_dim,
                    teacher_widths,
                    rows,
                    noise_std
                })
            ),
            (1usize..50, 1usize..10_000, 0.0f64..2.0)
                .prop_map(|(input_dim, rows, margin)| Some(DataSource::Separable { input_dim, rows, margin })),
        ]
    }

    prop_compose! {
        fn experiment()(
            method in prop_oneof![Just(Method::Tabgns), Just(Method::LargeMlp), Just(Method::RandomSearch)],
            out in proptest::option::of("[a-z/]{1,10}"),
            data in data_source(),
            valid in 0.05f64..0.3, test in 0.05f64..0.3,
            hidden_layers in 1usize..8, max_width in 1usize..1024,
            search in search_config(),
            trials in 1usize..50, widths in prop::collection::vec(1usize..600, 0..6),
            all_splits in any::<bool>(), save_supernet in any::<bool>(),
        ) -> ExperimentConfig {
            ExperimentConfig {
                method,
                out: out.map(PathBuf::from),
                data,
                split: SplitConfig { train: 1.0 - valid - test, valid, test },
                space: SpaceConfig { hidden_layers, max_width },
                search,
                baseline: BaselineConfig { trials, widths },
                report: ReportConfig { all_splits, save_supernet },
            }
        }
    }

    proptest! {
        #[test]
        fn config_round_trips(c in experiment()) {
            let text = c.to_toml();
            let back = ExperimentConfig::from_toml(&text).unwrap();
            prop_assert_eq!(&back, &c);
            prop_assert_eq!(back.to_toml(), text);
        }
    }

    #[test]
    fn resolved_config_names_the_data() {
        let mut c = ExperimentConfig::with_data(teacher());
        c.out = Some("runs/a".into());
        let text = c.to_toml();
        assert!(text.contains("source = \"teacher-student\""));
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), c);
    }
}
