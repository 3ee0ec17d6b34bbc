//! Mutual enhancement of long-tailed users and items for sequential
//! recommendation.
//!
//! The crate is organised as a pipeline:
//!
//! * [`data`] ingests `(user, item, timestamp)` logs, applies core filtering,
//!   builds leave-one-out splits, head/tail partitions and the per-item
//!   subsequence index, and generates synthetic long-tailed logs.
//! * [`model`] holds the causal self-attention sequence encoder, the user and
//!   item embedding generators, every loss term and their exact gradients.
//! * [`train`] runs backbone pretraining and the bilateral-branch fine-tuning
//!   stage with curriculum weights, Adam and resumable checkpoints.
//! * [`eval`] performs sampled-negative ranking evaluation with group-wise
//!   reporting over head/tail users and items.
//! * [`cli`] wires the stages together behind the `melt` binary.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
