//! Random width search: the sample-inefficient comparator.

use std::thread;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::{train_fixed, TrainOutcome};
use super::SearchConfig;
use crate::data::Splits;
use crate::seed::derive;
use crate::supernet::SearchSpace;
use crate::{Error, Result};

/// Environment variable capping worker threads. 0 or 1 runs sequentially.
pub const THREADS_ENV: &str = "TABGNS_THREADS";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub widths: Vec<usize>,
    pub valid_loss: f64,
    #[serde(skip)]
    pub seconds: f64,
}

impl PartialEq for TrialRecord {
    fn eq(&self, other: &Self) -> bool {
        (self.trial, self.seed, &self.widths, self.valid_loss) == (other.trial, other.seed, &other.widths, other.valid_loss)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomSearchResult {
    pub trials: Vec<TrialRecord>,
    /// Index into `trials` of the retrained candidate.
    pub best_trial: usize,
    /// Full-budget retraining of the best candidate.
    pub retrained: TrainOutcome,
    pub search_seconds: f64,
}

impl RandomSearchResult {
    pub fn best_widths(&self) -> &[usize] {
        &self.trials[self.best_trial].widths
    }
}

/// Worker count from [`THREADS_ENV`], defaulting to the available cores.
pub fn thread_cap() -> usize {
    match std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(n) => n.max(1),
        None => thread::available_parallelism().map_or(1, |n| n.get()),
    }
}

/// Budget of one screening trial: a tenth of the full epoch budget.
pub fn trial_epochs(config: &SearchConfig) -> usize {
    (config.max_epochs / 10).max(1)
}

/// Samples `trials` width tuples uniformly from `{1..W}^L`, screens each with
/// a reduced budget, then retrains the best-by-validation tuple with the full
/// budget. Trial `i` uses seed `config.seed + i`.
pub fn random_search_baseline(space: SearchSpace, splits: &Splits, config: &SearchConfig, trials: usize) -> Result<RandomSearchResult> {
    random_search_with_threads(space, splits, config, trials, thread_cap())
}

/// [`random_search_baseline`] with an explicit worker count. Results do not
/// depend on `threads`.
pub fn random_search_with_threads(
    space: SearchSpace,
    splits: &Splits,
    config: &SearchConfig,
    trials: usize,
    threads: usize,
) -> Result<RandomSearchResult> {
    if trials == 0 {
        return Err(Error::Argument("random search needs at least one trial".into()));
    }
    config.validate()?;
    space.validate()?;
    let started = Instant::now();
    let plans: Vec<(u64, Vec<usize>)> = (0..trials)
        .map(|i| {
            let seed = config.seed.wrapping_add(i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, 0x5EA4C4));
            let widths = (0..space.hidden_layers)
                .map(|_| rng.random_range(1..=space.max_width))
                .collect();
            (seed, widths)
        })
        .collect();

    let run = |i: usize| -> Result<TrialRecord> {
        let (seed, widths) = &plans[i];
        let t = Instant::now();
        let cfg = SearchConfig {
            seed: *seed,
            max_epochs: trial_epochs(config),
            ..config.clone()
        };
        let out = train_fixed(space, widths, splits, &cfg)?;
        Ok(TrialRecord {
            trial: i,
            seed: *seed,
            widths: widths.clone(),
            valid_loss: out.best_valid_loss,
            seconds: t.elapsed().as_secs_f64(),
        })
    };

    let threads = threads.clamp(1, trials);
    let records: Vec<TrialRecord> = if threads == 1 {
        (0..trials).map(run).collect::<Result<_>>()?
    } else {
        let mut slots: Vec<Option<Result<TrialRecord>>> = (0..trials).map(|_| None).collect();
        thread::scope(|s| {
            let handles: Vec<_> = (0..threads)
                .map(|w| {
                    let run = &run;
                    s.spawn(move || (w..trials).step_by(threads).map(|i| (i, run(i))).collect::<Vec<_>>())
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("trial worker panicked") {
                    slots[i] = Some(r);
                }
            }
        });
        slots.into_iter().map(|r| r.expect("every trial ran")).collect::<Result<_>>()?
    };

    // lowest index wins ties
    let best_trial = records
        .iter()
        .enumerate()
        .fold(0, |best, (i, r)| if r.valid_loss < records[best].valid_loss { i } else { best });
    let retrained = train_fixed(space, &records[best_trial].widths, splits, config)?;
    Ok(RandomSearchResult {
        trials: records,
        best_trial,
        retrained,
        search_seconds: started.elapsed().as_secs_f64(),
    })
}
