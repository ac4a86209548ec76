//! Plain supervised training of ungated MLPs: fine-tuning an extracted
//! architecture and training fixed-width baselines.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{as_divergence, check_splits, clip_global_norm, EpochRecord, SearchConfig};
use crate::data::{batches, gather, Splits};
use crate::grad::{mlp_backward, mlp_forward, DenseLayer, OptimizerState};
use crate::loss::{loss, loss_and_grad};
use crate::supernet::{Architecture, SearchSpace};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Best-validation snapshot (the starting weights if nothing improved).
    pub architecture: Architecture,
    pub history: Vec<EpochRecord>,
    /// Epoch of the snapshot; `None` when the starting weights were best.
    pub best_epoch: Option<usize>,
    pub initial_valid_loss: f64,
    pub best_valid_loss: f64,
    pub clip_events: usize,
    pub train_seconds: f64,
}

/// Trains `arch` from its current weights for up to `epochs` epochs with
/// early stopping after `patience` epochs without improvement. The starting
/// weights compete as the epoch-(-1) snapshot, so the result is never worse
/// on validation than the input.
pub fn fit_architecture(
    arch: Architecture,
    splits: &Splits,
    config: &SearchConfig,
    epochs: usize,
    patience: usize,
    shuffle_seed: u64,
) -> Result<TrainOutcome> {
    config.validate()?;
    check_splits(splits, &arch.space)?;
    let started = Instant::now();
    let valid_loss_of = |a: &Architecture| -> Result<f64> { loss(&a.predict(&splits.valid.features)?, &splits.valid.targets) };
    let initial_valid_loss = valid_loss_of(&arch)?;
    let mut best = (None, initial_valid_loss, arch.clone());
    let mut arch = arch;
    let mut opt = OptimizerState::new(config.optimizer, config.lr_weights)?;
    let mut history = Vec::new();
    let mut clip_events = 0;
    let neurons = arch.neuron_count();

    for epoch in 0..epochs {
        let train_batches = batches(splits.train.len(), config.batch_size, shuffle_seed, epoch)?;
        let mut loss_sum = 0.0;
        for (b, rows) in train_batches.iter().enumerate() {
            let (x, y) = gather(&splits.train, rows);
            let trace = mlp_forward(&arch.layers, &x)?;
            let (step_loss, d_out) = loss_and_grad(&trace.output, &y)?;
            if !step_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    loss: step_loss,
                });
            }
            loss_sum += step_loss;
            let mut grads = mlp_backward(&arch.layers, &trace, &d_out)?;
            let mut blocks: Vec<&mut [f64]> = grads
                .iter_mut()
                .flat_map(|g| [g.weight.as_mut_slice(), g.bias.as_mut_slice()])
                .collect();
            clip_events += usize::from(clip_global_norm(&mut blocks, config.clip_norm));
            let blocks: Vec<&[f64]> = blocks.into_iter().map(|b| &*b).collect();
            opt.step(&mut arch.blocks_mut(), &blocks)
                .map_err(|e| as_divergence(e, epoch, b))?;
        }
        let valid_loss = valid_loss_of(&arch)?;
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
            expected_size: neurons as f64,
            open_count: neurons,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
        if valid_loss < best.1 {
            best = (Some(epoch), valid_loss, arch.clone());
        }
        let since = match best.0 {
            Some(e) => epoch - e,
            None => epoch + 1,
        };
        if since >= patience {
            break;
        }
    }
    let (best_epoch, best_valid_loss, architecture) = best;
    Ok(TrainOutcome {
        architecture,
        history,
        best_epoch,
        initial_valid_loss,
        best_valid_loss,
        clip_events,
        train_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Warm-start fine-tuning of an extracted architecture.
pub fn finetune(arch: Architecture, splits: &Splits, config: &SearchConfig) -> Result<TrainOutcome> {
    let seeds = config.seeds();
    fit_architecture(arch, splits, config, config.finetune_epochs, config.patience, seeds.finetune)
}

/// He-initialized ungated MLP with the given hidden widths.
pub fn init_fixed(space: SearchSpace, widths: &[usize], seed: u64) -> Result<Architecture> {
    if widths.is_empty() || widths.contains(&0) {
        return Err(Error::Argument(format!("hidden widths must be non-empty and positive: {widths:?}")));
    }
    let fixed_space = SearchSpace::new(
        space.input_dim,
        space.output_dim,
        widths.len(),
        *widths.iter().max().expect("non-empty"),
        space.task,
    )?;
    let mut all = vec![space.input_dim];
    all.extend_from_slice(widths);
    all.push(space.output_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers: Vec<DenseLayer> = all
        .windows(2)
        .map(|w| DenseLayer::he_uniform(w[0], w[1], &mut rng))
        .collect();
    Architecture::from_layers(fixed_space, layers)
}

/// Trains an ungated MLP of the given hidden widths from scratch with the
/// search protocol (`max_epochs`, `patience`, `lr_weights`).
///
/// `space` supplies input/output dimensions and task; its width fields are
/// ignored. With widths `[W; L]` the initial weights equal those of the
/// SuperNet built from the same seed.
pub fn train_fixed(space: SearchSpace, widths: &[usize], splits: &Splits, config: &SearchConfig) -> Result<TrainOutcome> {
    let seeds = config.seeds();
    let arch = init_fixed(space, widths, seeds.init)?;
    fit_architecture(arch, splits, config, config.max_epochs, config.patience, seeds.shuffle)
}
