//! A small deterministic world of named entities with fixed attributes and
//! relations. Sentences about it form a memorizable pretraining corpus, and
//! the task generators derive their labels from the same facts.

use rand::seq::SliceRandom;

use crate::corpus::{build_vocab, window, AnnotatedDocument, CorpusError, EntityAnnotation, TrainingSequence, Vocabulary};
use crate::seeds;

pub const KIND_WORDS: [&str; 4] = ["singer", "city", "company", "river"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorldEntity {
    pub title: String,
    pub name: Vec<String>,
    /// 0..4, also the typing/NER label bucket.
    pub kind: usize,
    pub home: usize,
    pub partner: usize,
    pub trait_word: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct World {
    pub entities: Vec<WorldEntity>,
}

const ONSETS: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
const TRAIT_STEMS: [&str; 8] = ["brave", "quiet", "green", "swift", "old", "calm", "bright", "tall"];
const TRAIT_SUFFIXES: [&str; 6] = ["", "ish", "est", "ly", "some", "ful"];

/// Fixed function words used by the sentence templates.
pub const TEMPLATE_WORDS: [&str; 19] = [
    "was", "born", "in", ".", "often", "visits", "near", "people", "say", "is", "very", "the", "famous", "admired",
    "and", "met", "at", "chief", "capital",
];

impl World {
    /// A world of `n` entities (n ≥ 2) whose names and attributes are fixed
    /// by `seed`.
    pub fn new(seed: u64, n: usize) -> Self {
        assert!(n >= 2, "a world needs at least two entities");
        let mut syllables: Vec<String> = Vec::new();
        for o in ONSETS {
            for v in VOWELS {
                syllables.push(format!("{o}{v}"));
            }
        }
        let mut rng = seeds::rng(seed, &[0x0057_4f52_4c44]);
        let mut words: Vec<String> = Vec::new();
        for a in &syllables {
            for b in &syllables {
                words.push(format!("{a}{b}"));
            }
        }
        words.shuffle(&mut rng);
        let mut next_word = words.into_iter();
        let mut traits: Vec<String> = Vec::new();
        for s in TRAIT_SUFFIXES {
            for t in TRAIT_STEMS {
                traits.push(format!("{t}{s}"));
            }
        }
        traits.shuffle(&mut rng);
        let shift = 1 + (seeds::derive(seed, &[1]) as usize) % (n - 1);
        let mult = (1..n).rev().find(|m| gcd(*m, n) == 1 && *m != 1).unwrap_or(1);
        let entities = (0..n)
            .map(|e| {
                let len = 1 + e % 2;
                let name: Vec<String> = (0..len).map(|_| next_word.next().expect("enough syllable words")).collect();
                let title = name
                    .iter()
                    .map(|w| {
                        let mut c = w.chars();
                        let first = c.next().expect("non-empty").to_uppercase();
                        first.chain(c).collect::<String>()
                    })
                    .collect::<Vec<_>>()
                    .join("_");
                WorldEntity {
                    title,
                    name,
                    kind: e % KIND_WORDS.len(),
                    home: (e + shift) % n,
                    partner: (mult * e + 3) % n,
                    trait_word: traits[e % traits.len()].clone(),
                }
            })
            .collect();
        Self { entities }
    }

    /// The 48-entity world used by the acceptance experiments.
    pub fn standard() -> Self {
        Self::new(7, 48)
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn entity(&self, e: usize) -> &WorldEntity {
        &self.entities[e]
    }

    pub fn index_of(&self, title: &str) -> Option<usize> {
        self.entities.iter().position(|x| x.title == title)
    }

    /// Number of distinct sentence templates.
    pub const TEMPLATES: usize = 5;

    /// Words and (title, start, end) mentions of template `t` about entity `e`.
    pub fn sentence_parts(&self, e: usize, t: usize) -> (Vec<String>, Vec<(usize, usize, usize)>) {
        let ent = self.entity(e);
        let mut b = SentenceBuilder::default();
        match t % Self::TEMPLATES {
            0 => {
                b.mention(self, e);
                b.words(&["was", "born", "in"]);
                b.mention(self, ent.home);
            }
            1 => {
                b.mention(self, e);
                b.words(&["often", "visits", "the", "chief"]);
                b.mention(self, ent.partner);
                b.words(&["near"]);
                b.mention(self, ent.home);
            }
            2 => {
                b.words(&["people", "say"]);
                b.mention(self, e);
                b.words(&["is", "very", &ent.trait_word]);
            }
            3 => {
                b.words(&["the", "famous", KIND_WORDS[ent.kind]]);
                b.mention(self, e);
                b.words(&["admired"]);
                b.mention(self, ent.partner);
            }
            _ => {
                b.mention(self, e);
                b.words(&["and"]);
                b.mention(self, ent.partner);
                b.words(&["met", "at", "the", "capital"]);
                b.mention(self, ent.home);
            }
        }
        b.words(&["."]);
        (b.words, b.mentions)
    }

    pub fn sentence(&self, id: &str, e: usize, t: usize) -> AnnotatedDocument {
        let (words, mentions) = self.sentence_parts(e, t);
        let anns = mentions
            .into_iter()
            .map(|(x, s, end)| EntityAnnotation::new(self.entity(x).title.clone(), s, end))
            .collect();
        AnnotatedDocument::new(id, words, anns).expect("templates produce disjoint mentions")
    }

    /// `n` one-sentence documents cycling through entities, then templates.
    pub fn pretraining_corpus(&self, n: usize) -> Vec<AnnotatedDocument> {
        (0..n)
            .map(|i| {
                let e = i % self.len();
                let t = (i / self.len()) % Self::TEMPLATES;
                self.sentence(&format!("s{i:04}"), e, t)
            })
            .collect()
    }
}

/// Vocabulary (uncapped) and training windows for the first `n` corpus
/// sentences.
pub fn pretraining_data(
    world: &World,
    n: usize,
    max_len: usize,
) -> Result<(Vocabulary, Vec<TrainingSequence>), CorpusError> {
    let docs = world.pretraining_corpus(n);
    let vocab = build_vocab(&docs, usize::MAX, usize::MAX)?;
    let mut seqs = Vec::new();
    for d in &docs {
        seqs.extend(window(d, &vocab, max_len)?);
    }
    Ok((vocab, seqs))
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[derive(Default)]
pub struct SentenceBuilder {
    pub words: Vec<String>,
    pub mentions: Vec<(usize, usize, usize)>,
}

impl SentenceBuilder {
    pub fn words(&mut self, ws: &[&str]) {
        self.words.extend(ws.iter().map(|w| w.to_string()));
    }

    /// Appends the entity's name and records its span.
    pub fn mention(&mut self, world: &World, e: usize) -> (usize, usize) {
        let start = self.words.len();
        self.words.extend(world.entity(e).name.iter().cloned());
        let span = (start, self.words.len());
        self.mentions.push((e, span.0, span.1));
        span
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn world_is_deterministic_and_consistent() {
        let w = World::standard();
        assert_eq!(w, World::standard());
        assert_eq!(w.len(), 48);
        let names: HashSet<&Vec<String>> = w.entities.iter().map(|e| &e.name).collect();
        assert_eq!(names.len(), 48);
        let homes: HashSet<usize> = w.entities.iter().map(|e| e.home).collect();
        let partners: HashSet<usize> = w.entities.iter().map(|e| e.partner).collect();
        assert_eq!(homes.len(), 48);
        assert_eq!(partners.len(), 48);
        for (i, e) in w.entities.iter().enumerate() {
            assert_ne!(e.home, i);
            assert_ne!(e.partner, i);
            for word in &e.name {
                assert!(!TEMPLATE_WORDS.contains(&word.as_str()));
            }
        }
    }

    #[test]
    fn corpus_size_and_annotations() {
        let w = World::standard();
        let docs = w.pretraining_corpus(200);
        assert_eq!(docs.len(), 200);
        assert!(docs.iter().all(|d| !d.annotations.is_empty()));
        let titles: HashSet<&str> = docs.iter().flat_map(|d| d.annotations.iter().map(|a| a.title.as_str())).collect();
        assert_eq!(titles.len(), 48);
        let words: HashSet<&str> = docs.iter().flat_map(|d| d.words.iter().map(String::as_str)).collect();
        assert!(words.len() > 120 && words.len() < 200, "{}", words.len());
    }
}
