//! The encoder: word and entity input embeddings, a stack of post-norm
//! transformer blocks with entity-aware self-attention, and checkpoints.

mod attention;
pub mod checkpoint;
mod config;
mod encoder;
pub mod params;

pub use attention::{attend, attention_scores, TokenType};
pub use checkpoint::Checkpoint;
pub use config::{AttentionMode, ModelConfig};
pub use encoder::{embed, embed_raw, encode, encode_on_tape, encoder_layer, Dropout, Encoded, EncodedVars, EncoderInput};
pub use params::{copy_query_into_extra, init_encoder, init_pretraining_heads, names};

use thiserror::Error;

use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
