use serde::{Deserialize, Serialize};

use super::{AdamConfig, TrainError};

/// Hyperparameters of both training stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Head fraction for users and items.
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda_u: f64,
    pub lambda_i: f64,
    /// Fine-tuning epochs.
    pub e_max: usize,
    pub pretrain_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub generator_learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    pub include_reversed: bool,
    /// Most subsequences used for a tail item's contextual representation.
    pub context_cap: usize,
    /// Enhance subsequence encodings by their owners inside the item branch
    /// and tail-item contexts.
    pub enhance_subsequences: bool,
    /// Seed of the validation negatives used for model selection.
    pub valid_seed: u64,
    pub valid_negatives: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            beta: 1.0,
            gamma: 0.0,
            lambda_u: 0.1,
            lambda_i: 0.1,
            e_max: 30,
            pretrain_epochs: 20,
            batch_size: 128,
            learning_rate: 1e-3,
            generator_learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 42,
            include_reversed: true,
            context_cap: 64,
            enhance_subsequences: true,
            valid_seed: 7,
            valid_negatives: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: String| Err(TrainError::Config(m));
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return fail(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        for (name, v) in [("beta", self.beta), ("gamma", self.gamma)] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        for (name, v) in [("lambda_u", self.lambda_u), ("lambda_i", self.lambda_i)] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        if self.e_max < 1 {
            return fail("e_max must be at least 1".into());
        }
        if self.batch_size < 1 || self.context_cap < 1 || self.valid_negatives < 1 {
            return fail("batch_size, context_cap and valid_negatives must be positive".into());
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("generator_learning_rate", self.generator_learning_rate),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.adam_beta1)
            || !(0.0..1.0).contains(&self.adam_beta2)
            || self.adam_epsilon <= 0.0
        {
            return fail("Adam decays must lie in [0, 1) and epsilon must be positive".into());
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            generator_learning_rate: self.generator_learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }
}
