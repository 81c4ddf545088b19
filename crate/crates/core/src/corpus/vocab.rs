use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::document::AnnotatedDocument;
use super::tokenize::normalize_word;
use super::CorpusError;

/// Reserved word ids; these occupy the first slots of every word vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WordSpecial {
    Pad = 0,
    Unk = 1,
    Cls = 2,
    Sep = 3,
    Mask = 4,
}

impl WordSpecial {
    pub const ALL: [WordSpecial; 5] = [Self::Pad, Self::Unk, Self::Cls, Self::Sep, Self::Mask];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn token(self) -> &'static str {
        match self {
            Self::Pad => "[PAD]",
            Self::Unk => "[UNK_WORD]",
            Self::Cls => "[CLS]",
            Self::Sep => "[SEP]",
            Self::Mask => "[MASK_WORD]",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntitySpecial {
    Unk = 0,
    Mask = 1,
}

impl EntitySpecial {
    pub const ALL: [EntitySpecial; 2] = [Self::Unk, Self::Mask];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn token(self) -> &'static str {
        match self {
            Self::Unk => "[UNK]",
            Self::Mask => "[MASK]",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct VocabFile {
    words: Vec<String>,
    word_frequencies: Vec<u64>,
    entities: Vec<String>,
    entity_frequencies: Vec<u64>,
}

/// Word and entity vocabularies with the corpus frequencies they were ranked by.
/// Specials carry frequency 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    word_frequencies: Vec<u64>,
    entities: Vec<String>,
    entity_frequencies: Vec<u64>,
    word_index: HashMap<String, usize>,
    entity_index: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_file(file: VocabFile) -> Result<Self, CorpusError> {
        let bad = |m: String| CorpusError::Config(format!("vocabulary: {m}"));
        if file.words.len() != file.word_frequencies.len() || file.entities.len() != file.entity_frequencies.len() {
            return Err(bad("frequency list length differs from token list".into()));
        }
        for s in WordSpecial::ALL {
            if file.words.get(s.id()).map(String::as_str) != Some(s.token()) {
                return Err(bad(format!("word id {} must be {}", s.id(), s.token())));
            }
        }
        for s in EntitySpecial::ALL {
            if file.entities.get(s.id()).map(String::as_str) != Some(s.token()) {
                return Err(bad(format!("entity id {} must be {}", s.id(), s.token())));
            }
        }
        let mut word_index = HashMap::with_capacity(file.words.len());
        for (i, w) in file.words.iter().enumerate() {
            if word_index.insert(w.clone(), i).is_some() {
                return Err(bad(format!("duplicate word `{w}`")));
            }
        }
        let mut entity_index = HashMap::with_capacity(file.entities.len());
        for (i, e) in file.entities.iter().enumerate() {
            if entity_index.insert(e.clone(), i).is_some() {
                return Err(bad(format!("duplicate entity `{e}`")));
            }
        }
        Ok(Self {
            words: file.words,
            word_frequencies: file.word_frequencies,
            entities: file.entities,
            entity_frequencies: file.entity_frequencies,
            word_index,
            entity_index,
        })
    }

    fn to_file(&self) -> VocabFile {
        VocabFile {
            words: self.words.clone(),
            word_frequencies: self.word_frequencies.clone(),
            entities: self.entities.clone(),
            entity_frequencies: self.entity_frequencies.clone(),
        }
    }

    /// Builds a vocabulary from explicit token lists (specials are prepended).
    pub fn from_tokens(words: Vec<String>, entities: Vec<String>) -> Result<Self, CorpusError> {
        let mut w: Vec<String> = WordSpecial::ALL.iter().map(|s| s.token().to_string()).collect();
        w.extend(words);
        let mut e: Vec<String> = EntitySpecial::ALL.iter().map(|s| s.token().to_string()).collect();
        e.extend(entities);
        Self::from_file(VocabFile {
            word_frequencies: vec![0; w.len()],
            entity_frequencies: vec![0; e.len()],
            words: w,
            entities: e,
        })
    }

    pub fn word_count(&self) -> usize {
        self.words.len()
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    /// Looks up a raw word after normalization; unknown words map to [UNK_WORD].
    pub fn word_id(&self, word: &str) -> usize {
        self.word_index
            .get(&normalize_word(word))
            .copied()
            .unwrap_or(WordSpecial::Unk.id())
    }

    pub fn word_id_exact(&self, word: &str) -> Option<usize> {
        self.word_index.get(word).copied()
    }

    /// Unknown titles map to [UNK].
    pub fn entity_id(&self, title: &str) -> usize {
        self.entity_index.get(title).copied().unwrap_or(EntitySpecial::Unk.id())
    }

    pub fn entity_id_exact(&self, title: &str) -> Option<usize> {
        self.entity_index.get(title).copied()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn entity(&self, id: usize) -> Option<&str> {
        self.entities.get(id).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn word_frequency(&self, id: usize) -> u64 {
        self.word_frequencies.get(id).copied().unwrap_or(0)
    }

    pub fn entity_frequency(&self, id: usize) -> u64 {
        self.entity_frequencies.get(id).copied().unwrap_or(0)
    }

    /// First id that is not a special word; random-word replacement draws from here on.
    pub fn first_regular_word(&self) -> usize {
        WordSpecial::ALL.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("vocabulary serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, CorpusError> {
        let file: VocabFile =
            serde_json::from_str(text).map_err(|e| CorpusError::Config(format!("vocabulary: {e}")))?;
        Self::from_file(file)
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// SHA-256 over the token lists, used to tie checkpoints to data.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for w in &self.words {
            h.update(w.as_bytes());
            h.update([0u8]);
        }
        h.update([0xffu8]);
        for e in &self.entities {
            h.update(e.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }
}

fn rank(counts: HashMap<String, u64>, keep: usize) -> Vec<(String, u64)> {
    let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(keep);
    ranked
}

/// Ranks words and entities by frequency (ties broken lexicographically) and
/// keeps the top `V_w - 5` words and `V_e - 2` entities after the specials.
pub fn build_vocab<'a, I>(docs: I, v_w: usize, v_e: usize) -> Result<Vocabulary, CorpusError>
where
    I: IntoIterator<Item = &'a AnnotatedDocument>,
{
    if v_w < WordSpecial::ALL.len() {
        return Err(CorpusError::Config(format!("V_w must be at least {}, got {v_w}", WordSpecial::ALL.len())));
    }
    if v_e < EntitySpecial::ALL.len() {
        return Err(CorpusError::Config(format!("V_e must be at least {}, got {v_e}", EntitySpecial::ALL.len())));
    }
    let mut word_counts: HashMap<String, u64> = HashMap::new();
    let mut entity_counts: HashMap<String, u64> = HashMap::new();
    for doc in docs {
        for w in &doc.words {
            *word_counts.entry(normalize_word(w)).or_default() += 1;
        }
        for a in &doc.annotations {
            *entity_counts.entry(a.title.clone()).or_default() += 1;
        }
    }
    for s in WordSpecial::ALL {
        word_counts.remove(s.token());
    }
    for s in EntitySpecial::ALL {
        entity_counts.remove(s.token());
    }
    let words = rank(word_counts, v_w - WordSpecial::ALL.len());
    let entities = rank(entity_counts, v_e - EntitySpecial::ALL.len());

    let mut file = VocabFile {
        words: WordSpecial::ALL.iter().map(|s| s.token().to_string()).collect(),
        word_frequencies: vec![0; WordSpecial::ALL.len()],
        entities: EntitySpecial::ALL.iter().map(|s| s.token().to_string()).collect(),
        entity_frequencies: vec![0; EntitySpecial::ALL.len()],
    };
    for (w, c) in words {
        file.words.push(w);
        file.word_frequencies.push(c);
    }
    for (e, c) in entities {
        file.entities.push(e);
        file.entity_frequencies.push(c);
    }
    Vocabulary::from_file(file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EntityAnnotation;

    fn doc_with_entities(counts: &[(&str, usize)]) -> AnnotatedDocument {
        let total: usize = counts.iter().map(|c| c.1).sum();
        let words: Vec<String> = (0..total).map(|i| format!("w{i}")).collect();
        let mut anns = Vec::new();
        let mut pos = 0;
        for (title, n) in counts {
            for _ in 0..*n {
                anns.push(EntityAnnotation::new(*title, pos, pos + 1));
                pos += 1;
            }
        }
        AnnotatedDocument::new("d", words, anns).unwrap()
    }

    #[test]
    fn empty_corpus_has_only_specials() {
        let v = build_vocab(std::iter::empty(), 50_000, 500_000).unwrap();
        assert_eq!(v.word_count(), 5);
        assert_eq!(v.entity_count(), 2);
        assert_eq!(v.word(2), Some("[CLS]"));
        assert_eq!(v.entity(1), Some("[MASK]"));
    }

    #[test]
    fn entity_tie_break_is_lexicographic() {
        let doc = doc_with_entities(&[("D", 1), ("C", 3), ("A", 5), ("B", 3)]);
        let v = build_vocab([&doc], 100, 4).unwrap();
        assert_eq!(v.entities(), ["[UNK]", "[MASK]", "A", "B"]);
        assert_eq!(v.entity_frequency(2), 5);
        assert_eq!(v.entity_id("C"), EntitySpecial::Unk.id());
    }

    #[test]
    fn undersized_vocab_rejected() {
        assert!(build_vocab(std::iter::empty(), 4, 10).is_err());
        assert!(build_vocab(std::iter::empty(), 10, 1).is_err());
    }

    #[test]
    fn words_are_normalized_and_ranked() {
        let doc = AnnotatedDocument::new("d", ["The", "cat", "the", "Dog", "dog", "THE"].map(String::from).to_vec(), vec![])
            .unwrap();
        let v = build_vocab([&doc], 7, 2).unwrap();
        assert_eq!(&v.words()[5..], ["the", "dog"]);
        assert_eq!(v.word_id("CAT"), WordSpecial::Unk.id());
        assert_eq!(v.word_id("Dog"), 6);
    }

    #[test]
    fn json_round_trip_preserves_digest() {
        let doc = doc_with_entities(&[("A", 2), ("B", 1)]);
        let v = build_vocab([&doc], 10, 10).unwrap();
        let back = Vocabulary::from_json(&v.to_json()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.digest(), v.digest());
        assert_eq!(v.to_json(), back.to_json());
    }

    #[test]
    fn specials_must_lead_the_file() {
        let bad = r#"{"words":["x"],"word_frequencies":[0],"entities":[],"entity_frequencies":[]}"#;
        assert!(Vocabulary::from_json(bad).is_err());
    }
}
