//! Joint masked-word / masked-entity pretraining: masking plans, prediction
//! heads, the loss, AdamW with warmup and linear decay, and two-phase
//! parameter freezing.

mod heads;
mod loss;
mod masking;
mod optim;
mod schedule;
mod trainer;

pub use heads::{entity_logits, entity_prediction_logits, mlm_logits};
pub use loss::{argmax, pretrain_loss, pretrain_loss_on_tape, LossOptions, LossReport, MaskedExample};
pub use masking::{make_masking_plan, MaskedEntity, MaskedWord, MaskingConfig, MaskingPlan, WordAction};
pub use optim::{adamw_step, AdamWConfig, OptimizerState};
pub use schedule::{lr_schedule, TwoPhaseSchedule};
pub use trainer::{PretrainConfig, StepRecord, TrainEvent, Trainer, CHECKPOINT_KIND};

use thiserror::Error;

use crate::model::ModelError;
use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum PretrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
