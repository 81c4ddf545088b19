//! Fine-tuning heads for entity typing, relation classification, NER,
//! cloze-style QA and extractive QA, with decoders, metrics and synthetic
//! datasets.

pub mod decode;
pub mod example;
pub mod finetune;
pub mod heads;
pub mod metrics;
pub mod synth;

pub use decode::{extractive_decode, ner_decode, ner_enumerate, SpanPrediction};
pub use example::{
    parse_task_line, read_task_file, to_jsonl, ClozeExample, ExtractiveExample, NerExample, RelationExample, Span,
    TaskExample, TaskKind, TitledSpan, TypedSpan, TypingExample,
};
pub use finetune::{primary, score, EvalRecord, FineTuner, FinetuneConfig, FinetuneReport};
pub use heads::{
    cloze_forward, extractive_forward, forward, head_names, init_task_head, ner_forward, predict, prepare,
    relation_forward, task_loss, typing_forward, Gold, Prediction, PredictionRecord, Prepared, TaskSpec, NO_RELATION,
};
pub use metrics::{answer_scores, exact_match, relation_prf, set_prf, token_f1, Scores};
pub use synth::{rule_predict, synth_generate};

use crate::model::ModelError;
use crate::numerics::NumericsError;
use crate::pretrain::PretrainError;

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error("invalid task configuration: {0}")]
    Config(String),
    #[error("invalid task data: {0}")]
    Validation(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Pretrain(#[from] PretrainError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

impl TaskError {
    /// The message without the variant prefix.
    pub fn message(&self) -> String {
        match self {
            Self::Config(m) | Self::Validation(m) | Self::Io(m) => m.clone(),
            other => other.to_string(),
        }
    }
}
