use serde::{Deserialize, Serialize};

use super::ModelError;

/// Shape and regularisation of the causal self-attention encoder.
///
/// The padding id is not configured: it is always `n_items`, the extra last
/// row of the item table, which stays zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub dim: usize,
    pub max_len: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            dim: 50,
            max_len: 50,
            n_blocks: 1,
            n_heads: 2,
            dropout: 0.2,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.dim == 0 || self.n_heads == 0 || !self.dim.is_multiple_of(self.n_heads) {
            return Err(ModelError::Config(format!(
                "dim {} must be a positive multiple of n_heads {}",
                self.dim, self.n_heads
            )));
        }
        if self.max_len == 0 || self.n_blocks == 0 {
            return Err(ModelError::Config(
                "max_len and n_blocks must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!(
                "dropout {} must lie in [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.n_heads
    }
}
