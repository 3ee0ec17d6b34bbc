//! Curriculum weighting, Adam, backbone pretraining, bilateral-branch
//! fine-tuning and checkpoints.

mod adam;
mod checkpoint;
mod config;
mod curriculum;
mod trainer;

pub use self::adam::{optimizer_step, AdamConfig, AdamState};
pub use self::checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, BestModel, Checkpoint,
    CheckpointError, Stage,
};
pub use self::config::TrainConfig;
pub use self::curriculum::{curriculum_weight, CurriculumState};
pub use self::trainer::{EpochRecord, Objective, TrainData, TrainOutcome, Trainer};

use thiserror::Error;

use crate::eval::EvalError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("curriculum input {x} lies outside [{min}, {max}]")]
    Weight { x: usize, min: usize, max: usize },
    #[error("{stage} diverged in epoch {epoch}: non-finite loss")]
    Divergence { stage: Stage, epoch: usize },
    #[error("non-finite optimiser update in parameter block {block}")]
    NonFinite { block: String },
    #[error("partition has no usable head {0}")]
    Partition(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}
