//! The alternating search loop, fine-tuning, baselines and evaluation.
//!
//! One search epoch walks the shuffled training batches once. Each training
//! batch is paired with a validation batch (the validation stream cycles when
//! it is shorter) and two steps run back to back:
//!
//! 1. stochastic forward on the training batch, weight gradients, weight
//!    update — gate logits untouched;
//! 2. fresh stochastic forward on the validation batch, gate gradients, gate
//!    update — weights untouched.
//!
//! The epoch ends with a deterministic-mode validation loss, which drives
//! early stopping. The best-epoch snapshot is restored before extraction.

mod baseline;
mod metrics;
mod train;

pub use baseline::{
    random_search_baseline, random_search_with_threads, thread_cap, trial_epochs, RandomSearchResult, TrialRecord,
    THREADS_ENV,
};
pub use metrics::{evaluate, Metrics, Model};
pub use train::{finetune, fit_architecture, init_fixed, train_fixed, TrainOutcome};

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{batches, gather, Splits};
use crate::gates::NoiseSharing;
use crate::grad::{Matrix, OptimizerKind, OptimizerState};
use crate::loss::{loss, Targets};
use crate::seed::{derive_tagged, RunSeeds};
use crate::supernet::{Architecture, Gating, GradientSet, SearchSpace, SuperNet, Which};
use crate::{Error, Result};

/// Hyperparameters of a search run (and of the training around it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub lr_weights: f64,
    pub lr_gates: f64,
    pub tau: f64,
    pub gate_init: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub finetune_epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub noise: NoiseSharing,
    /// Global gradient-norm clip; 0 disables it.
    pub clip_norm: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            lr_weights: 0.001,
            lr_gates: 0.05,
            tau: 1.0,
            gate_init: -3.0,
            max_epochs: 300,
            patience: 20,
            batch_size: 256,
            finetune_epochs: 20,
            seed: 0,
            optimizer: OptimizerKind::Adaptive,
            noise: NoiseSharing::PerBatch,
            clip_norm: 0.0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("lr_weights", self.lr_weights), ("lr_gates", self.lr_gates), ("tau", self.tau)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a positive number, got {v}")));
            }
        }
        if !self.gate_init.is_finite() {
            return Err(Error::Config(format!("gate_init must be finite, got {}", self.gate_init)));
        }
        if !(self.clip_norm >= 0.0 && self.clip_norm.is_finite()) {
            return Err(Error::Config(format!("clip_norm must be >= 0, got {}", self.clip_norm)));
        }
        for (name, v) in [("max_epochs", self.max_epochs), ("patience", self.patience), ("batch_size", self.batch_size)] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    pub fn seeds(&self) -> RunSeeds {
        RunSeeds::from_root(self.seed)
    }
}

/// One row of a training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss of the epoch's weight steps.
    pub train_loss: f64,
    /// Validation loss at the end of the epoch (deterministic gates).
    pub valid_loss: f64,
    /// Expected architecture size at the start of the epoch.
    pub expected_size: f64,
    /// Gates with a non-negative logit at the start of the epoch.
    pub open_count: usize,
    /// Seconds since the run started, at the end of the epoch.
    pub wall_seconds: f64,
}

/// Which step of the alternation a hook call refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepInfo {
    pub epoch: usize,
    pub batch: usize,
    pub which: Which,
}

/// Observer called around every optimizer step of the search loop.
pub trait SearchHook {
    fn before_step(&mut self, _info: StepInfo, _net: &SuperNet) {}
    fn after_step(&mut self, _info: StepInfo, _net: &SuperNet) {}
}

struct NoHook;
impl SearchHook for NoHook {}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    /// Best-epoch SuperNet.
    pub supernet: SuperNet,
    /// Extracted from [`SearchResult::supernet`], before fine-tuning.
    pub architecture: Architecture,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid_loss: f64,
    /// Number of steps whose gradient was rescaled by the norm clip.
    pub clip_events: usize,
    pub seeds: RunSeeds,
    pub search_seconds: f64,
}

pub(crate) fn check_splits(splits: &Splits, space: &SearchSpace) -> Result<()> {
    if splits.train.is_empty() || splits.valid.is_empty() {
        return Err(Error::Data("train and validation splits must be non-empty".into()));
    }
    if splits.train.n_features() != space.input_dim {
        return Err(Error::shape("search space input", space.input_dim, splits.train.n_features()));
    }
    if splits.train.output_dim() != space.output_dim {
        return Err(Error::shape("search space output", space.output_dim, splits.train.output_dim()));
    }
    if splits.train.task() != space.task {
        return Err(Error::Data(format!(
            "search space task {:?} does not match the data ({:?})",
            space.task,
            splits.train.task()
        )));
    }
    Ok(())
}

/// Rescales `grads` in place to global norm `max_norm`; true if it did.
pub(crate) fn clip_global_norm(grads: &mut [&mut [f64]], max_norm: f64) -> bool {
    if max_norm <= 0.0 {
        return false;
    }
    let norm = grads.iter().flat_map(|g| g.iter()).map(|v| v * v).sum::<f64>().sqrt();
    if norm <= max_norm || !norm.is_finite() {
        return false;
    }
    let scale = max_norm / norm;
    for v in grads.iter_mut().flat_map(|g| g.iter_mut()) {
        *v *= scale;
    }
    true
}

pub(crate) fn as_divergence(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::NonFinite { .. } => Error::Divergence {
            epoch,
            batch,
            loss: f64::NAN,
        },
        e => e,
    }
}

/// One stochastic forward/backward. Batch-shared noise takes the sparse path.
fn step(
    net: &SuperNet,
    x: &Matrix,
    y: &Targets,
    sharing: NoiseSharing,
    which: Which,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, GradientSet)> {
    match sharing {
        NoiseSharing::PerBatch => {
            let sample = net.gates.realize(net.gates.draw_noise(rng, 1, sharing))?;
            net.step_gradients(x, y, &sample, which)
        }
        NoiseSharing::PerSample => {
            let trace = net.forward_shared(x, Gating::Stochastic, sharing, rng)?;
            net.backward(&trace, y, which)
        }
    }
}

/// Runs the search with default (no-op) hooks.
pub fn search(splits: &Splits, space: SearchSpace, config: &SearchConfig) -> Result<SearchResult> {
    search_with_hook(splits, space, config, &mut NoHook)
}

/// Runs the search, calling `hook` around every weight and gate step.
pub fn search_with_hook(
    splits: &Splits,
    space: SearchSpace,
    config: &SearchConfig,
    hook: &mut dyn SearchHook,
) -> Result<SearchResult> {
    config.validate()?;
    space.validate()?;
    check_splits(splits, &space)?;
    let started = Instant::now();
    let seeds = config.seeds();
    let valid_shuffle = derive_tagged(seeds.shuffle, "valid");
    let mut net = SuperNet::new(space, seeds.init, config.gate_init, config.tau)?;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seeds.gate_noise);
    let mut w_opt = OptimizerState::new(config.optimizer, config.lr_weights)?;
    let mut g_opt = OptimizerState::new(config.optimizer, config.lr_gates)?;

    let mut history = Vec::new();
    let mut best: Option<(usize, f64, SuperNet)> = None;
    let mut clip_events = 0;

    for epoch in 0..config.max_epochs {
        let expected_size = net.expected_size();
        let open_count = net.gates.open_count();
        let train_batches = batches(splits.train.len(), config.batch_size, seeds.shuffle, epoch)?;
        let valid_batches = batches(splits.valid.len(), config.batch_size, valid_shuffle, epoch)?;
        let mut loss_sum = 0.0;

        for (b, rows) in train_batches.iter().enumerate() {
            // weights
            let info = StepInfo {
                epoch,
                batch: b,
                which: Which::Weights,
            };
            hook.before_step(info, &net);
            let (x, y) = gather(&splits.train, rows);
            let (step_loss, grads) = step(&net, &x, &y, config.noise, Which::Weights, &mut noise_rng)?;
            if !step_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    loss: step_loss,
                });
            }
            loss_sum += step_loss;
            let GradientSet::Weights(mut grads) = grads else {
                unreachable!("weight step returns weight gradients")
            };
            let mut blocks: Vec<&mut [f64]> = grads
                .iter_mut()
                .flat_map(|g| [g.weight.as_mut_slice(), g.bias.as_mut_slice()])
                .collect();
            clip_events += usize::from(clip_global_norm(&mut blocks, config.clip_norm));
            let blocks: Vec<&[f64]> = blocks.into_iter().map(|b| &*b).collect();
            w_opt
                .step(&mut net.weight_blocks_mut(), &blocks)
                .map_err(|e| as_divergence(e, epoch, b))?;
            hook.after_step(info, &net);

            // gates
            let info = StepInfo {
                which: Which::Gates,
                ..info
            };
            hook.before_step(info, &net);
            let (x, y) = gather(&splits.valid, &valid_batches[b % valid_batches.len()]);
            let (gate_loss, grads) = step(&net, &x, &y, config.noise, Which::Gates, &mut noise_rng)?;
            if !gate_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    loss: gate_loss,
                });
            }
            let GradientSet::Gates(mut grads) = grads else {
                unreachable!("gate step returns gate gradients")
            };
            let mut blocks: Vec<&mut [f64]> = grads.iter_mut().map(Vec::as_mut_slice).collect();
            clip_events += usize::from(clip_global_norm(&mut blocks, config.clip_norm));
            let blocks: Vec<&[f64]> = blocks.into_iter().map(|b| &*b).collect();
            g_opt
                .step(&mut net.gates.blocks_mut(), &blocks)
                .map_err(|e| as_divergence(e, epoch, b))?;
            hook.after_step(info, &net);
        }

        // the extracted network computes the deterministic-mode predictions
        let valid_loss = loss(
            &net.extract_architecture().predict(&splits.valid.features)?,
            &splits.valid.targets,
        )?;
        if !valid_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: train_batches.len(),
                loss: valid_loss,
            });
        }
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_batches.len() as f64,
            valid_loss,
            expected_size,
            open_count,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
        if best.as_ref().is_none_or(|(_, l, _)| valid_loss < *l) {
            best = Some((epoch, valid_loss, net.clone()));
        }
        let best_epoch = best.as_ref().map_or(0, |b| b.0);
        if epoch - best_epoch >= config.patience {
            break;
        }
    }

    let (best_epoch, best_valid_loss, supernet) = best.expect("at least one epoch ran");
    let architecture = supernet.extract_architecture();
    Ok(SearchResult {
        supernet,
        architecture,
        history,
        best_epoch,
        best_valid_loss,
        clip_events,
        seeds,
        search_seconds: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests;
