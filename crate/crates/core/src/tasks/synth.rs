//! Rule-labelled task datasets over the synthetic world. Every label is a
//! deterministic function of entity identities or of a marker word, and the
//! `rule_*` functions apply those rules directly as classifiers.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::seeds;
use crate::synth::{SentenceBuilder, World, KIND_WORDS};

use super::example::{
    ClozeExample, ExtractiveExample, NerExample, RelationExample, Span, TaskExample, TaskKind, TitledSpan, TypedSpan,
    TypingExample,
};
use super::heads::{Prediction, NO_RELATION};

pub const NOTABLE: &str = "notable";
pub const RELATIONS: [&str; 5] = [NO_RELATION, "lives_in", "works_for", "rival_of", "flows_into"];
pub const CLOZE_MARKER: &str = "chief";
pub const ANSWER_MARKER: &str = "capital";
pub const PLACEHOLDER: &str = "@placeholder";

/// Type labels of entity `e`: its kind, plus `notable` for every third id.
pub fn typing_labels(world: &World, e: usize) -> Vec<String> {
    let mut out = vec![KIND_WORDS[world.entity(e).kind].to_string()];
    if e % 3 == 0 {
        out.push(NOTABLE.to_string());
    }
    out
}

/// Relation between an ordered (head, tail) pair, a function of their kinds.
pub fn relation_label(world: &World, head: usize, tail: usize) -> &'static str {
    let (kh, kt) = (world.entity(head).kind, world.entity(tail).kind);
    RELATIONS[(kh + 2 * kt) % RELATIONS.len()]
}

fn rng_for(kind: TaskKind, seed: u64, index: usize) -> ChaCha8Rng {
    seeds::rng(seed, &[0x5441_534b, kind as u64, index as u64])
}

fn titled(world: &World, mentions: &[(usize, usize, usize)]) -> Vec<TitledSpan> {
    mentions
        .iter()
        .map(|&(e, start, end)| TitledSpan { start, end, title: world.entity(e).title.clone() })
        .collect()
}

/// `size` examples of `kind`; example `i` depends only on `(seed, i)`.
pub fn synth_generate(world: &World, kind: TaskKind, seed: u64, size: usize) -> Vec<TaskExample> {
    (0..size).map(|i| generate_one(world, kind, seed, i)).collect()
}

fn generate_one(world: &World, kind: TaskKind, seed: u64, i: usize) -> TaskExample {
    let mut rng = rng_for(kind, seed, i);
    let n = world.len();
    let id = format!("{kind}-{seed}-{i:05}");
    match kind {
        TaskKind::Typing => {
            let e = rng.random_range(0..n);
            let (words, mentions) = world.sentence_parts(e, rng.random_range(0..World::TEMPLATES));
            let (_, start, end) = mentions[0];
            TaskExample::Typing(TypingExample { id, words, target: Span::new(start, end), labels: typing_labels(world, e) })
        }
        TaskKind::Relation => {
            let e = rng.random_range(0..n);
            let t = [0, 1, 3, 4][rng.random_range(0..4)];
            let (words, mentions) = world.sentence_parts(e, t);
            let (mut h, mut tl) = (mentions[0], mentions[1]);
            if rng.random_bool(0.5) {
                std::mem::swap(&mut h, &mut tl);
            }
            TaskExample::Relation(RelationExample {
                id,
                words,
                head: Span::new(h.1, h.2),
                tail: Span::new(tl.1, tl.2),
                label: relation_label(world, h.0, tl.0).to_string(),
            })
        }
        TaskKind::Ner => {
            let e = rng.random_range(0..n);
            let (words, mentions) = world.sentence_parts(e, rng.random_range(0..World::TEMPLATES));
            let spans = mentions
                .iter()
                .map(|&(x, start, end)| TypedSpan { start, end, label: KIND_WORDS[world.entity(x).kind].to_string() })
                .collect();
            TaskExample::Ner(NerExample { id, words, spans })
        }
        TaskKind::Cloze => {
            let mut picks: Vec<usize> = (0..n).collect();
            picks.shuffle(&mut rng);
            picks.truncate(3);
            let answer = picks[rng.random_range(0..3)];
            let mut b = SentenceBuilder::default();
            for &x in &picks {
                if x == answer {
                    b.words(&["the", CLOZE_MARKER]);
                }
                b.mention(world, x);
                b.words(&["is", "very", &world.entity(x).trait_word, "."]);
            }
            if rng.random_bool(0.5) {
                b.mention(world, answer);
                b.words(&["often", "visits"]);
                b.mention(world, world.entity(answer).partner);
                b.words(&["."]);
            }
            TaskExample::Cloze(ClozeExample {
                id,
                question: vec![PLACEHOLDER.into(), "was".into(), "the".into(), CLOZE_MARKER.into(), ".".into()],
                placeholder: 0,
                candidates: titled(world, &b.mentions),
                passage: b.words,
                answer: world.entity(answer).title.clone(),
            })
        }
        TaskKind::Extractive => {
            let mut picks: Vec<usize> = (0..n).collect();
            picks.shuffle(&mut rng);
            picks.truncate(3);
            let k = rng.random_range(0..3);
            let mut b = SentenceBuilder::default();
            let mut answer = Span::new(0, 0);
            for (j, &x) in picks.iter().enumerate() {
                b.mention(world, x);
                if j == k {
                    b.words(&["met", "at", "the", ANSWER_MARKER]);
                    let (s, e) = b.mention(world, world.entity(x).home);
                    answer = Span::new(s, e);
                } else {
                    b.words(&["was", "born", "in"]);
                    b.mention(world, world.entity(x).home);
                }
                b.words(&["."]);
            }
            TaskExample::Extractive(ExtractiveExample {
                id,
                question: vec!["the".into(), ANSWER_MARKER.into(), "was".into(), "?".into()],
                entities: titled(world, &b.mentions),
                passage: b.words,
                answer,
            })
        }
    }
}

fn entity_at(world: &World, words: &[String], span: Span) -> Option<usize> {
    let name = &words[span.start..span.end];
    world.entities.iter().position(|e| e.name == name)
}

/// The generating rule applied as a classifier: it reads entity identities
/// off the words and the marker positions, never the gold labels.
pub fn rule_predict(world: &World, ex: &TaskExample) -> Prediction {
    match ex {
        TaskExample::Typing(x) => Prediction::Labels(
            entity_at(world, &x.words, x.target).map(|e| typing_labels(world, e)).unwrap_or_default(),
        ),
        TaskExample::Relation(x) => {
            let (h, t) = (entity_at(world, &x.words, x.head), entity_at(world, &x.words, x.tail));
            Prediction::Label(match (h, t) {
                (Some(h), Some(t)) => relation_label(world, h, t).to_string(),
                _ => NO_RELATION.to_string(),
            })
        }
        TaskExample::Ner(x) => {
            let mut spans = Vec::new();
            let mut i = 0;
            while i < x.words.len() {
                let hit = (i + 1..=x.words.len())
                    .rev()
                    .find_map(|end| entity_at(world, &x.words, Span::new(i, end)).map(|e| (end, e)));
                match hit {
                    Some((end, e)) => {
                        spans.push(TypedSpan { start: i, end, label: KIND_WORDS[world.entity(e).kind].to_string() });
                        i = end;
                    }
                    None => i += 1,
                }
            }
            Prediction::Spans(spans)
        }
        TaskExample::Cloze(x) => {
            let marker = x.passage.iter().position(|w| w == CLOZE_MARKER);
            let title = marker
                .and_then(|m| x.candidates.iter().find(|c| c.start == m + 1))
                .map(|c| c.title.clone())
                .unwrap_or_default();
            Prediction::Text(title)
        }
        TaskExample::Extractive(x) => {
            let marker = x.passage.iter().position(|w| w == ANSWER_MARKER);
            let text = marker
                .and_then(|m| x.entities.iter().find(|c| c.start == m + 1))
                .map(|c| x.passage[c.start..c.end].join(" "))
                .unwrap_or_default();
            Prediction::Text(text)
        }
    }
}
