//! Sampled-negative ranking evaluation with head/tail group reporting.

mod inference;
mod metrics;
mod report;

pub use self::inference::{rank_of, InferenceModel};
pub use self::metrics::{hit_at_k, ndcg_at_k};
pub use self::report::{
    evaluate, sample_negatives, GroupMetrics, MeanMetrics, MetricsReport, UserRecord,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::UserId;
use crate::model::ModelError;

/// Which held-out item is ranked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub k: usize,
    pub n_negatives: usize,
    pub seed: u64,
    pub target: Target,
    /// Append the validation item to the input when ranking the test item.
    pub append_validation: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k: 10,
            n_negatives: 100,
            seed: 0,
            target: Target::Test,
            append_validation: true,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.k < 1 {
            return Err(EvalError::Config("k must be at least 1".into()));
        }
        if self.n_negatives < 1 {
            return Err(EvalError::Config("n_negatives must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("user {user}: only {available} unconsumed items, {requested} negatives requested")]
    InsufficientCandidates {
        user: UserId,
        available: usize,
        requested: usize,
    },
    #[error("rank must be at least 1, got {0}")]
    InvalidRank(usize),
    #[error("no candidates to score")]
    EmptyCandidates,
    #[error("invalid evaluation configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}
