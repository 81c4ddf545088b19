use std::ops::Range;

use super::document::AnnotatedDocument;
use super::vocab::{Vocabulary, WordSpecial};
use super::CorpusError;

pub const MIN_WINDOW: usize = 16;

/// One encoder input cut from a document: `[CLS] w… [SEP]` plus the entities
/// whose spans fall fully inside the window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingSequence {
    pub doc_id: String,
    /// Document word indices covered by this window (specials excluded).
    pub doc_words: Range<usize>,
    pub word_ids: Vec<usize>,
    pub entity_ids: Vec<usize>,
    /// Offsets into `word_ids`, counting [CLS] as 0; contiguous ascending runs.
    pub entity_positions: Vec<Vec<usize>>,
}

impl TrainingSequence {
    pub fn num_words(&self) -> usize {
        self.word_ids.len()
    }

    pub fn num_entities(&self) -> usize {
        self.entity_ids.len()
    }

    /// Checks position validity against the sequence and vocabulary sizes.
    pub fn validate(&self, v_w: usize, v_e: usize) -> Result<(), String> {
        if let Some(w) = self.word_ids.iter().find(|&&w| w >= v_w) {
            return Err(format!("word id {w} out of range for V_w = {v_w}"));
        }
        if let Some(e) = self.entity_ids.iter().find(|&&e| e >= v_e) {
            return Err(format!("entity id {e} out of range for V_e = {v_e}"));
        }
        if self.entity_ids.len() != self.entity_positions.len() {
            return Err(format!(
                "{} entity ids but {} position lists",
                self.entity_ids.len(),
                self.entity_positions.len()
            ));
        }
        for (j, pos) in self.entity_positions.iter().enumerate() {
            if pos.is_empty() {
                return Err(format!("entity {j} has an empty position list"));
            }
            if let Some(p) = pos.iter().find(|&&p| p >= self.word_ids.len()) {
                return Err(format!("entity {j} position {p} beyond {} words", self.word_ids.len()));
            }
        }
        Ok(())
    }
}

/// Splits a document into consecutive, non-overlapping windows of at most
/// `max_word_length` tokens including [CLS] and [SEP].
pub fn window(doc: &AnnotatedDocument, vocab: &Vocabulary, max_word_length: usize) -> Result<Vec<TrainingSequence>, CorpusError> {
    if max_word_length < MIN_WINDOW {
        return Err(CorpusError::Config(format!(
            "max_word_length must be at least {MIN_WINDOW}, got {max_word_length}"
        )));
    }
    let body = max_word_length - 2;
    let mut out = Vec::new();
    let mut next_ann = 0;
    let mut start = 0;
    while start < doc.words.len() {
        let end = (start + body).min(doc.words.len());
        let mut word_ids = Vec::with_capacity(end - start + 2);
        word_ids.push(WordSpecial::Cls.id());
        word_ids.extend(doc.words[start..end].iter().map(|w| vocab.word_id(w)));
        word_ids.push(WordSpecial::Sep.id());

        let mut entity_ids = Vec::new();
        let mut entity_positions = Vec::new();
        while next_ann < doc.annotations.len() && doc.annotations[next_ann].start < end {
            let a = &doc.annotations[next_ann];
            if a.start >= start && a.end <= end {
                entity_ids.push(vocab.entity_id(&a.title));
                entity_positions.push((a.start - start + 1..a.end - start + 1).collect());
            }
            next_ann += 1;
        }
        out.push(TrainingSequence {
            doc_id: doc.id.clone(),
            doc_words: start..end,
            word_ids,
            entity_ids,
            entity_positions,
        });
        start = end;
    }
    Ok(out)
}
