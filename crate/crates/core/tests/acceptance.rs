//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any gating criterion fails.

use std::fs;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tabgns::cli::{cmd_search, DataSource, ExperimentConfig};
use tabgns::data::{make_teacher_student, normalize, split, Splits, DEFAULT_FRACTIONS};
use tabgns::gates::{gate_hard, gate_soft_prob, sample_gumbel, sigmoid, NoiseSharing};
use tabgns::grad::{central_difference, max_relative_error, Matrix};
use tabgns::loss::{loss, Targets, Task};
use tabgns::search::{
    evaluate, finetune, random_search_with_threads, search, search_with_hook, train_fixed, EpochRecord, Model, SearchConfig,
    SearchHook, SearchResult, StepInfo,
};
use tabgns::supernet::{count_parameters, GradientSet, ParamConvention, SearchSpace, SuperNet, Which};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const FIXTURE_SEED: u64 = 12345;
const SPLIT_SEED: u64 = 99;

struct Outcome {
    results: Vec<(usize, bool)>,
}

impl Outcome {
    fn record(&mut self, id: usize, pass: bool, detail: String, started: Instant) {
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("{tag} criterion {id}: {detail} [{:.1}s]", started.elapsed().as_secs_f64());
        self.results.push((id, pass));
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::new(rows, cols, (0..rows * cols).map(|_| r.random_range(-scale..scale)).collect()).unwrap()
}

/// Small SuperNet with random biases and logits spread around zero.
fn random_net(r: &mut ChaCha8Rng, max_layers: usize, max_width: usize, outputs: usize) -> SuperNet {
    let s = SearchSpace::new(
        r.random_range(1..=4),
        outputs,
        r.random_range(1..=max_layers),
        r.random_range(1..=max_width),
        Task::Regression,
    )
    .unwrap();
    let mut net = SuperNet::new(s, r.random(), 0.0, r.random_range(0.5..2.0)).unwrap();
    for layer in &mut net.layers {
        for b in &mut layer.bias {
            *b = r.random_range(-0.5..0.5);
        }
    }
    for l in 0..s.hidden_layers {
        for g in net.gates.layer_mut(l) {
            *g = r.random_range(-2.0..2.0);
        }
    }
    net
}

fn load_blocks(blocks: Vec<&mut [f64]>, flat: &[f64]) {
    let mut off = 0;
    for b in blocks {
        let n = b.len();
        b.copy_from_slice(&flat[off..off + n]);
        off += n;
    }
}

fn criterion_1(out: &mut Outcome) {
    let t = Instant::now();
    let mut r = ChaCha8Rng::seed_from_u64(101);
    let (mut worst_w, mut worst_g) = (0.0f64, 0.0f64);
    for i in 0..50 {
        let classify = i % 2 == 1;
        let outputs = if classify { 3 } else { r.random_range(1..=3) };
        let net = random_net(&mut r, 3, 8, outputs);
        let n = r.random_range(1..=16);
        let x = random_matrix(&mut r, n, net.space.input_dim, 1.5);
        let y = if classify {
            Targets::Classification {
                labels: (0..n).map(|_| r.random_range(0..3)).collect(),
                n_classes: 3,
            }
        } else {
            Targets::Regression(random_matrix(&mut r, n, outputs, 1.5))
        };
        let sharing = if i % 4 < 2 { NoiseSharing::PerBatch } else { NoiseSharing::PerSample };
        let noise = net.gates.draw_noise(&mut r, n, sharing);

        let trace = net.forward_with_noise(&x, noise.clone(), false).unwrap();
        let (_, GradientSet::Weights(grads)) = net.backward(&trace, &y, Which::Weights).unwrap() else {
            unreachable!()
        };
        let analytic: Vec<f64> = grads
            .iter()
            .flat_map(|g| g.weight.as_slice().iter().chain(&g.bias).copied())
            .collect();
        let params: Vec<f64> = net
            .layers
            .iter()
            .flat_map(|l| l.weight.as_slice().iter().chain(&l.bias).copied())
            .collect();
        let numeric = central_difference(
            |p| {
                let mut probe = net.clone();
                load_blocks(probe.weight_blocks_mut(), p);
                loss(probe.forward_with_noise(&x, noise.clone(), false).unwrap().predictions(), &y).unwrap()
            },
            &params,
            1e-6,
        )
        .unwrap();
        worst_w = worst_w.max(max_relative_error(&analytic, &numeric));

        let trace = net.forward_with_noise(&x, noise.clone(), true).unwrap();
        let (_, GradientSet::Gates(grads)) = net.backward(&trace, &y, Which::Gates).unwrap() else {
            unreachable!()
        };
        let logits = net.gates.logits().concat();
        let numeric = central_difference(
            |p| {
                let mut probe = net.clone();
                load_blocks(probe.gates.blocks_mut(), p);
                loss(probe.forward_with_noise(&x, noise.clone(), true).unwrap().predictions(), &y).unwrap()
            },
            &logits,
            1e-6,
        )
        .unwrap();
        worst_g = worst_g.max(max_relative_error(&grads.concat(), &numeric));
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = worst_w <= 1e-4 && worst_g <= 1e-4 && secs < 30.0;
    out.record(
        1,
        pass,
        format!("50 nets, max rel error weights {worst_w:.2e}, soft gates {worst_g:.2e} (<= 1e-4)"),
        t,
    );
}

fn criterion_2(out: &mut Outcome) {
    let t = Instant::now();
    let mut r = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    let mut at_minus_three = Vec::new();
    for g in [-3.0, 0.0, 2.0] {
        for tau in [0.5, 1.0, 2.0] {
            let n = 100_000;
            let o1 = sample_gumbel(&mut r, n);
            let o2 = sample_gumbel(&mut r, n);
            let open: f64 = o1
                .iter()
                .zip(&o2)
                .map(|(&a, &b)| gate_hard(gate_soft_prob(g, a, b, tau).unwrap()))
                .sum();
            let freq = open / n as f64;
            worst = worst.max((freq - sigmoid(g)).abs());
            if g == -3.0 {
                at_minus_three.push(freq);
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    out.record(
        2,
        worst <= 0.01 && secs < 10.0,
        format!("max |freq - sigmoid(g)| = {worst:.4}; g=-3 frequencies {at_minus_three:.4?} vs 0.0474"),
        t,
    );
}

fn criterion_3(out: &mut Outcome) {
    let t = Instant::now();
    let n = count_parameters(&[10, 512, 512, 512, 512, 512, 1], ParamConvention::Hidden);
    out.record(3, n == 1_048_576, format!("[512]x5 hidden-to-hidden count = {n}"), t);
}

fn criterion_4(out: &mut Outcome) {
    let t = Instant::now();
    let mut r = ChaCha8Rng::seed_from_u64(404);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let outputs = r.random_range(1..=3);
        let net = random_net(&mut r, 4, 16, outputs);
        let x = random_matrix(&mut r, 1000, net.space.input_dim, 3.0);
        let arch = net.extract_architecture();
        let diff = arch.predict(&x).unwrap().max_abs_diff(&net.predict_deterministic(&x).unwrap());
        worst = worst.max(diff);
    }
    let secs = t.elapsed().as_secs_f64();
    out.record(
        4,
        worst <= 1e-10 && secs < 60.0,
        format!("100 nets x 1000 inputs, max abs difference {worst:.2e}"),
        t,
    );
}

struct Purity {
    before: Option<SuperNet>,
    weight_steps: usize,
    gate_steps: usize,
    violations: usize,
}

impl SearchHook for Purity {
    fn before_step(&mut self, _: StepInfo, net: &SuperNet) {
        self.before = Some(net.clone());
    }

    fn after_step(&mut self, info: StepInfo, net: &SuperNet) {
        let before = self.before.take().expect("before_step runs first");
        let frozen_intact = match info.which {
            Which::Weights => {
                self.weight_steps += 1;
                bitwise(&before.gates.logits().concat(), &net.gates.logits().concat())
            }
            Which::Gates => {
                self.gate_steps += 1;
                before.layers.iter().zip(&net.layers).all(|(a, b)| {
                    bitwise(a.weight.as_slice(), b.weight.as_slice()) && bitwise(&a.bias, &b.bias)
                })
            }
        };
        if !frozen_intact {
            self.violations += 1;
        }
    }
}

fn bitwise(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn fixture() -> Splits {
    let ds = make_teacher_student(10, &[8, 8], 20_000, 0.1, FIXTURE_SEED).unwrap();
    normalize(split(&ds, DEFAULT_FRACTIONS, SPLIT_SEED).unwrap()).unwrap()
}

fn space() -> SearchSpace {
    SearchSpace::new(10, 1, 3, 64, Task::Regression).unwrap()
}

fn criterion_5(out: &mut Outcome, splits: &Splits) {
    let t = Instant::now();
    let mut hook = Purity {
        before: None,
        weight_steps: 0,
        gate_steps: 0,
        violations: 0,
    };
    let cfg = SearchConfig {
        max_epochs: 5,
        gate_init: 0.5,
        ..SearchConfig::default()
    };
    let r = search_with_hook(splits, space(), &cfg, &mut hook).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let pass = hook.violations == 0
        && hook.weight_steps > 0
        && hook.weight_steps == hook.gate_steps
        && r.history.len() == 5
        && secs < 60.0;
    out.record(
        5,
        pass,
        format!(
            "{} weight steps, {} gate steps over {} epochs, {} freeze violations",
            hook.weight_steps,
            hook.gate_steps,
            r.history.len(),
            hook.violations
        ),
        t,
    );
}

struct SeedRun {
    result: SearchResult,
    neurons: usize,
    params_hidden: u64,
    finetuned_mse: f64,
}

fn run_seed(splits: &Splits, seed: u64, gate_init: f64) -> SeedRun {
    let cfg = SearchConfig {
        seed,
        gate_init,
        ..SearchConfig::default()
    };
    let result = search(splits, space(), &cfg).unwrap();
    let tuned = finetune(result.architecture.clone(), splits, &cfg).unwrap();
    let m = evaluate(Model::Architecture(&tuned.architecture), &splits.test, splits.normalizer.as_ref()).unwrap();
    SeedRun {
        neurons: result.architecture.neuron_count(),
        params_hidden: result.architecture.param_count(ParamConvention::Hidden),
        finetuned_mse: m.mse.unwrap(),
        result,
    }
}

fn criterion_6(out: &mut Outcome, runs: &[SeedRun], splits: &Splits) {
    let t = Instant::now();
    let full = count_parameters(&space().full_widths(), ParamConvention::Hidden);
    let baseline: Vec<f64> = SEEDS
        .iter()
        .map(|&seed| {
            let cfg = SearchConfig {
                seed,
                ..SearchConfig::default()
            };
            let b = train_fixed(space(), &[64, 64, 64], splits, &cfg).unwrap();
            evaluate(Model::Architecture(&b.architecture), &splits.test, splits.normalizer.as_ref())
                .unwrap()
                .mse
                .unwrap()
        })
        .collect();
    let med_params = median(runs.iter().map(|r| r.params_hidden as f64).collect());
    let med_mse = median(runs.iter().map(|r| r.finetuned_mse).collect());
    let med_base = median(baseline.clone());
    let pass = med_params <= 0.25 * full as f64 && med_mse <= 1.2 * med_base;
    let widths: Vec<_> = runs.iter().map(|r| r.result.architecture.hidden_widths()).collect();
    out.record(
        6,
        pass,
        format!(
            "median params {med_params} / {full} ({:.1}%), median test MSE {med_mse:.5} vs baseline {med_base:.5} \
             (ratio {:.3}); widths {widths:?}",
            100.0 * med_params / full as f64,
            med_mse / med_base
        ),
        t,
    );
}

fn criterion_7(out: &mut Outcome, sweep: &[(f64, Vec<SeedRun>)], started: Instant) {
    let space = space();
    let gates = (space.hidden_layers * space.max_width) as f64;
    let mut worst = 0.0f64;
    for (init, runs) in sweep {
        let expect = sigmoid(*init) * gates;
        for r in runs {
            worst = worst.max((r.result.history[0].expected_size - expect).abs() / expect);
        }
    }
    let medians: Vec<f64> = sweep
        .iter()
        .map(|(_, runs)| median(runs.iter().map(|r| r.neurons as f64).collect()))
        .collect();
    let monotone = medians.windows(2).all(|w| w[0] <= w[1]);
    out.record(
        7,
        worst <= 0.01 && monotone,
        format!(
            "(a) max relative epoch-0 size error {worst:.2e}; (b) median neurons {medians:?} for gate_init {:?}",
            sweep.iter().map(|s| s.0).collect::<Vec<_>>()
        ),
        started,
    );
}

fn criterion_8(out: &mut Outcome, c6_seconds: f64) {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut config = ExperimentConfig::with_data(DataSource::TeacherStudent {
        input_dim: 10,
        teacher_widths: vec![8, 8],
        rows: 20_000,
        noise_std: 0.1,
    });
    config.space.hidden_layers = 3;
    config.space.max_width = 64;
    config.search.seed = 7;
    let mut bytes = Vec::new();
    for run in ["a", "b"] {
        config.out = Some(dir.path().join(run));
        let r = cmd_search(&config).unwrap();
        bytes.push((
            fs::read(r.out.join("report.json")).unwrap(),
            fs::read(r.out.join("history.csv")).unwrap(),
        ));
    }
    let same = bytes[0] == bytes[1];
    let secs = t.elapsed().as_secs_f64();
    out.record(
        8,
        same && secs <= 2.0 * c6_seconds.max(1.0),
        format!(
            "report.json {} bytes, history.csv {} bytes, identical: {same}",
            bytes[0].0.len(),
            bytes[0].1.len()
        ),
        t,
    );
}

/// Wall seconds at the first epoch whose validation loss reaches `target`.
fn time_to(history: &[EpochRecord], target: f64) -> Option<f64> {
    history.iter().find(|r| r.valid_loss <= target).map(|r| r.wall_seconds)
}

fn criterion_9(out: &mut Outcome, splits: &Splits) {
    let t = Instant::now();
    let cfg = SearchConfig::default();

    let started = Instant::now();
    let searched = search(splits, space(), &cfg).unwrap();
    let tuned = finetune(searched.architecture.clone(), splits, &cfg).unwrap();
    let tabgns_total = started.elapsed().as_secs_f64();

    // single worker, like the search itself
    let started = Instant::now();
    let random = random_search_with_threads(space(), splits, &cfg, 10, 1).unwrap();
    let random_total = started.elapsed().as_secs_f64();
    let screening: f64 = random.trials.iter().map(|r| r.seconds).sum();

    let tabgns_best = searched.best_valid_loss.min(tuned.best_valid_loss);
    let random_best = random.retrained.best_valid_loss;
    let target = 1.2 * tabgns_best.max(random_best);

    let tabgns_time = time_to(&searched.history, target)
        .or_else(|| time_to(&tuned.history, target).map(|s| searched.search_seconds + s))
        .unwrap_or(tabgns_total);
    let random_time = screening + time_to(&random.retrained.history, target).unwrap_or(random.retrained.train_seconds);

    out.record(
        9,
        tabgns_time < random_time,
        format!(
            "time to valid loss <= {target:.5}: TabGNS {tabgns_time:.2}s vs random search {random_time:.2}s; \
             best valid {tabgns_best:.5} vs {random_best:.5}; raw totals {tabgns_total:.2}s vs {random_total:.2}s"
        ),
        t,
    );
}

fn main() {
    // `cargo test -- <filter>` style arguments are accepted and ignored
    let mut out = Outcome { results: Vec::new() };
    criterion_1(&mut out);
    criterion_2(&mut out);
    criterion_3(&mut out);
    criterion_4(&mut out);

    let splits = fixture();
    criterion_5(&mut out, &splits);

    let t6 = Instant::now();
    let base: Vec<SeedRun> = SEEDS.iter().map(|&s| run_seed(&splits, s, -3.0)).collect();
    criterion_6(&mut out, &base, &splits);
    let c6_seconds = t6.elapsed().as_secs_f64();

    let t7 = Instant::now();
    let mut sweep = vec![(-3.0, base)];
    for init in [0.0, 3.0] {
        sweep.push((init, SEEDS.iter().map(|&s| run_seed(&splits, s, init)).collect()));
    }
    criterion_7(&mut out, &sweep, t7);

    criterion_8(&mut out, c6_seconds);
    criterion_9(&mut out, &splits);

    let failed: Vec<usize> = out.results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", out.results.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
