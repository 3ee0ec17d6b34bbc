//! Interaction ingestion, splitting, head/tail partitioning and the per-item
//! subsequence index.

mod index;
mod io;
mod log;
mod partition;
mod split;
mod synth;

pub use self::index::{
    build_subsequence_index, sample_subsequences, Direction, Subsequence, SubsequenceIndex,
};
pub use self::io::{read_json, write_json};
pub use self::log::{
    core_filter, core_filter_pass, parse_interactions, Interaction, InteractionLog,
};
pub use self::partition::{partition_head_tail, Group, HeadTailPartition};
pub use self::split::{
    build_sequences, leave_one_out_split, truncate_recent, SplitDataset, UserSequence,
};
pub use self::synth::{generate_synthetic, SyntheticConfig};

use thiserror::Error;

/// Dense user index, contiguous from 0.
pub type UserId = usize;
/// Dense item index, contiguous from 0.
pub type ItemId = usize;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("user {user} has {len} interactions; leave-one-out needs at least 3")]
    Split { user: UserId, len: usize },
    #[error("cannot keep the {requested} most recent of {len} items")]
    Truncation { requested: usize, len: usize },
    #[error("cannot sample {requested} subsequences for item {item}: only {available} available")]
    Sampling {
        item: ItemId,
        requested: usize,
        available: usize,
    },
    #[error("invalid data configuration: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}
