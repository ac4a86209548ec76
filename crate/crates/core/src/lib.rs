//! Gated neuron selection for tabular MLPs.
//!
//! A SuperNet holding every candidate MLP in a search space is trained with
//! one learnable stochastic gate per hidden neuron. Weights are updated on
//! training batches and gates on validation batches, alternately. When the
//! search stops, neurons whose gates are open are cut out together with their
//! weights, and the resulting compact network is fine-tuned from that warm
//! start.
//!
//! Module map:
//!
//! - [`grad`]: dense layers, hand-written backward passes, optimizers and a
//!   finite-difference oracle.
//! - [`gates`]: Gumbel noise, the two-category gate probability and the
//!   straight-through gradient.
//! - [`supernet`]: the gated SuperNet, extraction and checkpoints.
//! - [`search`]: the alternating search loop, fine-tuning and baselines.
//! - [`data`]: CSV ingestion, splits, normalization, batching, synthetic data.
//! - [`cli`]: experiment configuration, run reports and the command front end.

mod error;

pub mod cli;
pub mod data;
pub mod gates;
pub mod grad;
pub mod loss;
pub mod search;
pub mod seed;
pub mod supernet;

pub use error::{Error, Result};
