//! Entity-annotated documents: ingestion, vocabularies, windowing into
//! training sequences, and the dictionary-based entity annotator.

mod annotate;
mod dictionary;
mod document;
mod tokenize;
mod vocab;
pub mod wikitext;
mod window;

pub use annotate::{annotate, Annotations, PageDictionary, DEFAULT_LINK_PROBABILITY_THRESHOLD};
pub use dictionary::{build_dictionary, EntityDictionary, NameStats};
pub use document::{ingest, parse_document_line, read_documents, AnnotatedDocument, EntityAnnotation};
pub use tokenize::{normalize_word, surface_name, tokenize};
pub use vocab::{build_vocab, EntitySpecial, Vocabulary, WordSpecial};
pub use window::{window, TrainingSequence, MIN_WINDOW};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("document `{doc_id}`: annotations [{a_start}, {a_end}) and [{b_start}, {b_end}) overlap")]
    Overlap { doc_id: String, a_start: usize, a_end: usize, b_start: usize, b_end: usize },
    #[error("document `{doc_id}`: annotation `{title}` span [{start}, {end}) is outside 0..{len}")]
    SpanOutOfRange { doc_id: String, title: String, start: usize, end: usize, len: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CorpusError {
    /// Attaches a line number to document-level validation errors.
    pub(crate) fn at_line(self, line: usize) -> Self {
        match self {
            CorpusError::Malformed { .. } | CorpusError::Io(_) | CorpusError::Config(_) => self,
            other => CorpusError::Malformed { line, message: other.to_string() },
        }
    }
}
