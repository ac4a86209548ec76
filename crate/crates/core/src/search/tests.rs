use super::*;
use crate::data::{make_separable_classification, make_teacher_student, normalize, split, TabularDataset, DEFAULT_FRACTIONS};
use crate::gates::sigmoid;
use crate::grad::DenseLayer;
use crate::loss::Task;
use crate::supernet::ParamConvention;

fn fixture(rows: usize) -> Splits {
    let ds = make_teacher_student(4, &[4], rows, 0.05, 21).unwrap();
    normalize(split(&ds, DEFAULT_FRACTIONS, 5).unwrap()).unwrap()
}

fn small_space() -> SearchSpace {
    SearchSpace::new(4, 1, 2, 8, Task::Regression).unwrap()
}

fn quick(seed: u64, epochs: usize) -> SearchConfig {
    SearchConfig {
        seed,
        max_epochs: epochs,
        batch_size: 32,
        lr_weights: 0.01,
        ..SearchConfig::default()
    }
}

#[test]
fn defaults() {
    let c = SearchConfig::default();
    assert_eq!((c.lr_weights, c.lr_gates, c.tau, c.gate_init), (0.001, 0.05, 1.0, -3.0));
    assert_eq!((c.max_epochs, c.patience, c.batch_size, c.finetune_epochs), (300, 20, 256, 20));
    assert_eq!(c.optimizer, OptimizerKind::Adaptive);
    assert!(c.validate().is_ok());
    for bad in [
        SearchConfig { lr_gates: 0.0, ..c.clone() },
        SearchConfig { tau: -1.0, ..c.clone() },
        SearchConfig { batch_size: 0, ..c.clone() },
        SearchConfig { gate_init: f64::NAN, ..c.clone() },
        SearchConfig { clip_norm: -1.0, ..c.clone() },
    ] {
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
}

#[test]
fn first_record_reports_initial_size() {
    let splits = fixture(400);
    let r = search(&splits, small_space(), &quick(1, 2)).unwrap();
    let expect = sigmoid(-3.0) * 16.0;
    assert!((r.history[0].expected_size - expect).abs() <= 0.01 * expect);
    assert_eq!(r.history[0].open_count, 0);
}

#[test]
fn one_epoch_gives_one_row() {
    let splits = fixture(300);
    let r = search(&splits, small_space(), &quick(2, 1)).unwrap();
    assert_eq!(r.history.len(), 1);
    assert_eq!(r.best_epoch, 0);
}

#[test]
fn search_is_reproducible() {
    let splits = fixture(400);
    let a = search(&splits, small_space(), &quick(3, 6)).unwrap();
    let b = search(&splits, small_space(), &quick(3, 6)).unwrap();
    assert_eq!(a.supernet, b.supernet);
    assert_eq!(a.architecture, b.architecture);
    let strip = |h: &[EpochRecord]| h.iter().map(|r| (r.train_loss, r.valid_loss, r.expected_size)).collect::<Vec<_>>();
    assert_eq!(strip(&a.history), strip(&b.history));
    let c = search(&splits, small_space(), &quick(4, 6)).unwrap();
    assert_ne!(a.supernet, c.supernet);
}

#[test]
fn early_stopping_contract() {
    let splits = fixture(400);
    let cfg = SearchConfig {
        patience: 2,
        ..quick(5, 40)
    };
    let r = search(&splits, small_space(), &cfg).unwrap();
    assert!(r.history.len() <= cfg.max_epochs);
    let argmin = r
        .history
        .iter()
        .enumerate()
        .fold(0, |b, (i, h)| if h.valid_loss < r.history[b].valid_loss { i } else { b });
    assert_eq!(r.best_epoch, argmin);
    assert_eq!(r.best_valid_loss, r.history[argmin].valid_loss);
    assert!(r.history.last().unwrap().epoch <= r.best_epoch + cfg.patience);
    // the returned SuperNet is the best-epoch snapshot
    let v = loss(&r.supernet.predict_deterministic(&splits.valid.features).unwrap(), &splits.valid.targets).unwrap();
    assert!((v - r.best_valid_loss).abs() < 1e-10);
}

struct Purity {
    before: Option<SuperNet>,
    weight_steps: usize,
    gate_steps: usize,
}

impl SearchHook for Purity {
    fn before_step(&mut self, _: StepInfo, net: &SuperNet) {
        self.before = Some(net.clone());
    }
    fn after_step(&mut self, info: StepInfo, net: &SuperNet) {
        let before = self.before.take().unwrap();
        match info.which {
            Which::Weights => {
                self.weight_steps += 1;
                assert_eq!(before.gates, net.gates);
            }
            Which::Gates => {
                self.gate_steps += 1;
                assert_eq!(before.layers, net.layers);
            }
        }
    }
}

#[test]
fn steps_alternate_and_freeze_the_other_half() {
    let splits = fixture(500);
    for noise in [NoiseSharing::PerBatch, NoiseSharing::PerSample] {
        let mut hook = Purity {
            before: None,
            weight_steps: 0,
            gate_steps: 0,
        };
        let cfg = SearchConfig { noise, ..quick(6, 3) };
        let r = search_with_hook(&splits, small_space(), &cfg, &mut hook).unwrap();
        // 350 train rows in batches of 32 -> 11 steps of each kind per epoch
        assert_eq!(hook.weight_steps, 11 * r.history.len());
        assert_eq!(hook.gate_steps, hook.weight_steps);
    }
}

#[test]
fn divergence_names_epoch_and_batch() {
    let splits = fixture(300);
    let cfg = SearchConfig {
        optimizer: OptimizerKind::PlainSgd,
        lr_weights: 1e150,
        gate_init: 5.0,
        ..quick(7, 5)
    };
    match search(&splits, small_space(), &cfg) {
        Err(Error::Divergence { epoch, .. }) => assert_eq!(epoch, 0),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn clipping_is_counted() {
    let splits = fixture(300);
    let cfg = SearchConfig {
        clip_norm: 1e-6,
        ..quick(8, 1)
    };
    let r = search(&splits, small_space(), &cfg).unwrap();
    assert!(r.clip_events > 0);
    assert_eq!(search(&splits, small_space(), &quick(8, 1)).unwrap().clip_events, 0);
}

#[test]
fn rejects_mismatched_data() {
    let splits = fixture(300);
    let wrong = SearchSpace::new(5, 1, 2, 8, Task::Regression).unwrap();
    assert!(matches!(search(&splits, wrong, &quick(0, 1)), Err(Error::Shape { .. })));
    let task = SearchSpace::new(4, 1, 2, 8, Task::Classification).unwrap();
    assert!(search(&splits, task, &quick(0, 1)).is_err());
}

#[test]
fn zero_epoch_finetune_is_a_no_op() {
    let splits = fixture(400);
    let cfg = SearchConfig {
        finetune_epochs: 0,
        ..quick(9, 4)
    };
    let r = search(&splits, small_space(), &cfg).unwrap();
    let ft = finetune(r.architecture.clone(), &splits, &cfg).unwrap();
    assert_eq!(ft.architecture, r.architecture);
    assert!(ft.history.is_empty() && ft.best_epoch.is_none());
    let norm = splits.normalizer.as_ref();
    assert_eq!(
        evaluate(Model::Architecture(&ft.architecture), &splits.test, norm).unwrap(),
        evaluate(Model::Architecture(&r.architecture), &splits.test, norm).unwrap()
    );
}

#[test]
fn finetune_never_worsens_validation() {
    let splits = fixture(600);
    for seed in 0..3 {
        let cfg = SearchConfig {
            finetune_epochs: 10,
            ..quick(seed, 5)
        };
        let r = search(&splits, small_space(), &cfg).unwrap();
        let ft = finetune(r.architecture.clone(), &splits, &cfg).unwrap();
        assert!(ft.best_valid_loss <= ft.initial_valid_loss + 1e-9);
        assert!((ft.initial_valid_loss - r.best_valid_loss).abs() < 1e-10);
    }
}

#[test]
fn single_neuron_separates_a_margin_dataset() {
    let ds = make_separable_classification(3, 1000, 0.3, 4).unwrap();
    let splits = normalize(split(&ds, DEFAULT_FRACTIONS, 1).unwrap()).unwrap();
    let space = SearchSpace::new(3, 2, 1, 1, Task::Classification).unwrap();
    let cfg = SearchConfig {
        lr_weights: 0.02,
        batch_size: 32,
        max_epochs: 60,
        ..SearchConfig::default()
    };
    let out = train_fixed(space, &[1], &splits, &cfg).unwrap();
    let m = evaluate(Model::Architecture(&out.architecture), &splits.test, None).unwrap();
    assert!(m.accuracy.unwrap() > 0.95, "{m:?}");
    assert_eq!(train_fixed(space, &[1], &splits, &cfg).unwrap().architecture, out.architecture);
}

#[test]
fn large_mlp_parameter_count() {
    let space = SearchSpace::with_defaults(54, 7, Task::Classification).unwrap();
    let arch = init_fixed(space, &[512; 5], 0).unwrap();
    assert_eq!(arch.param_count(ParamConvention::Hidden), 1_048_576);
    assert!(init_fixed(space, &[3, 0], 0).is_err());
}

#[test]
fn fixed_init_matches_supernet_init() {
    let space = small_space();
    let arch = init_fixed(space, &[8, 8], 17).unwrap();
    let net = SuperNet::new(space, 17, 0.0, 1.0).unwrap();
    assert_eq!(arch.layers, net.layers);
}

#[test]
fn evaluate_examples() {
    // perfect predictions
    let x = Matrix::from_rows(&[[1.0], [2.0], [3.0]]).unwrap();
    let y = Matrix::from_rows(&[[2.0], [4.0], [6.0]]).unwrap();
    let ds = TabularDataset::new(x, Targets::Regression(y), vec!["x".into()], vec!["y".into()]).unwrap();
    let space = SearchSpace::new(1, 1, 1, 1, Task::Regression).unwrap();
    let layers = vec![
        DenseLayer::new(Matrix::from_rows(&[[1.0]]).unwrap(), vec![0.0]).unwrap(),
        DenseLayer::new(Matrix::from_rows(&[[2.0]]).unwrap(), vec![0.0]).unwrap(),
    ];
    let arch = Architecture::from_layers(space, layers.clone()).unwrap();
    let m = evaluate(Model::Architecture(&arch), &ds, None).unwrap();
    assert_eq!((m.loss, m.mse), (0.0, Some(0.0)));
    assert_eq!(m.params_full, 4);

    // constant majority-class predictor on a 70/30 split
    let x = Matrix::zeros(10, 1);
    let labels = vec![0, 0, 0, 0, 0, 0, 0, 1, 1, 1];
    let ds = TabularDataset::new(
        x,
        Targets::Classification { labels, n_classes: 2 },
        vec!["x".into()],
        vec!["c".into()],
    )
    .unwrap();
    let space = SearchSpace::new(1, 2, 1, 1, Task::Classification).unwrap();
    let layers = vec![
        DenseLayer::new(Matrix::from_rows(&[[0.0]]).unwrap(), vec![0.0]).unwrap(),
        DenseLayer::new(Matrix::from_rows(&[[0.0], [0.0]]).unwrap(), vec![1.0, 0.0]).unwrap(),
    ];
    let arch = Architecture::from_layers(space, layers).unwrap();
    let m = evaluate(Model::Architecture(&arch), &ds, None).unwrap();
    assert!((m.accuracy.unwrap() - 0.7).abs() < 1e-12);
    assert!(m.mse.is_none());

    let wrong = TabularDataset::new(
        Matrix::zeros(2, 2),
        Targets::Classification { labels: vec![0, 1], n_classes: 2 },
        vec!["a".into(), "b".into()],
        vec!["c".into()],
    )
    .unwrap();
    assert!(matches!(evaluate(Model::Architecture(&arch), &wrong, None), Err(Error::Shape { .. })));
}

#[test]
fn supernet_and_extracted_metrics_agree() {
    let splits = fixture(400);
    let r = search(&splits, small_space(), &quick(10, 3)).unwrap();
    let norm = splits.normalizer.as_ref();
    let a = evaluate(Model::SuperNet(&r.supernet), &splits.test, norm).unwrap();
    let b = evaluate(Model::Architecture(&r.architecture), &splits.test, norm).unwrap();
    assert!((a.loss - b.loss).abs() < 1e-10);
    assert_eq!((a.params_hidden, a.params_full), (b.params_hidden, b.params_full));
}

#[test]
fn random_search_examples() {
    let splits = fixture(400);
    let cfg = quick(11, 20);
    let one = random_search_baseline(small_space(), &splits, &cfg, 1).unwrap();
    assert_eq!(one.trials.len(), 1);
    let direct = train_fixed(small_space(), one.best_widths(), &splits, &cfg).unwrap();
    assert_eq!(direct.architecture, one.retrained.architecture);

    let tiny = SearchSpace::new(4, 1, 1, 2, Task::Regression).unwrap();
    let r = random_search_baseline(tiny, &splits, &cfg, 16).unwrap();
    let mut seen: Vec<usize> = r.trials.iter().map(|t| t.widths[0]).collect();
    seen.sort_unstable();
    seen.dedup();
    assert_eq!(seen, vec![1, 2]);
    let best = r.trials[r.best_trial].valid_loss;
    assert!(r.trials.iter().all(|t| t.valid_loss >= best));
    assert!(r.trials[..r.best_trial].iter().all(|t| t.valid_loss > best));
    assert!(random_search_baseline(tiny, &splits, &cfg, 0).is_err());
}

#[test]
fn random_search_ignores_thread_count() {
    let splits = fixture(300);
    let cfg = quick(12, 10);
    let a = random_search_with_threads(small_space(), &splits, &cfg, 5, 1).unwrap();
    let b = random_search_with_threads(small_space(), &splits, &cfg, 5, 3).unwrap();
    assert_eq!(a.trials, b.trials);
    assert_eq!(a.retrained.architecture, b.retrained.architecture);
}
