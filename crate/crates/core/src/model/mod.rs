//! Sequence encoder, embedding generators, loss terms and gradients.

mod config;
mod encoder;
mod enhance;
mod loss;
mod params;

pub use self::config::EncoderConfig;
pub use self::encoder::{encode_hidden, encode_sequence, EncoderTrace};
pub use self::enhance::{
    contextualized_item_rep, enhance_item_embedding, enhance_tail_user_rep, user_representations,
    ContextOptions, InputEmbeddings, TailContexts,
};
pub use self::loss::{
    item_branch_loss, rec_loss, total_loss, user_branch_loss, BatchObjective, DropoutKey,
    ItemBranchTarget, LossBreakdown, RecExample, UserBranchTarget,
};
pub use self::params::{Affine, AttentionBlock, LayerNorm, ModelParams};

use thiserror::Error;

use crate::data::ItemId;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cannot encode an empty sequence")]
    EmptySequence,
    #[error("item id {item} is outside the catalogue of {n_items} items")]
    UnknownItem { item: ItemId, n_items: usize },
    #[error("item {0} has no subsequences to build a contextual representation from")]
    EmptyContext(ItemId),
    #[error("{0}")]
    OutOfRange(String),
    #[error("non-finite value in parameter block {block}")]
    NonFinite { block: String },
    #[error("invalid encoder configuration: {0}")]
    Config(String),
}
