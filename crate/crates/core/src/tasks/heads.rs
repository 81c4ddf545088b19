//! Input construction, forward passes, losses and predictions for the five
//! fine-tuning heads.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{EntitySpecial, Vocabulary, WordSpecial};
use crate::model::params::Initializer;
use crate::model::{encode_on_tape, Dropout, EncoderInput, ModelConfig};
use crate::numerics::{ParamStore, Scalar, Tape, Tensor, Var};

use super::decode::{extractive_decode, ner_decode, ner_enumerate, SpanPrediction};
use super::example::{Span, TaskExample, TaskKind, TypedSpan};
use super::TaskError;

pub const NO_RELATION: &str = "no_relation";
pub const NON_ENTITY: &str = "O";

/// Head parameter names.
pub mod head_names {
    pub const TYPING_W: &str = "task.typing.weight";
    pub const TYPING_B: &str = "task.typing.bias";
    pub const RELATION_W: &str = "task.relation.weight";
    pub const RELATION_B: &str = "task.relation.bias";
    pub const NER_W: &str = "task.ner.weight";
    pub const NER_B: &str = "task.ner.bias";
    pub const CLOZE_W: &str = "task.cloze.weight";
    pub const CLOZE_B: &str = "task.cloze.bias";
    /// The start/end classifiers have no bias: a shift shared by all
    /// positions cancels in the softmax over positions.
    pub const START_W: &str = "task.extractive.start.weight";
    pub const END_W: &str = "task.extractive.end.weight";
}

/// Label space and decoding limits of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Entity types (typing, NER) or relations (relation); empty otherwise.
    /// NER adds an implicit non-entity class at index 0.
    #[serde(default)]
    pub labels: Vec<String>,
    #[serde(default = "default_max_span_len")]
    pub max_span_len: usize,
    #[serde(default = "default_max_answer_len")]
    pub max_answer_len: usize,
    /// Upper bound on entity tokens per forward pass; NER candidates beyond
    /// it are split across passes over the same words.
    #[serde(default = "default_max_entities")]
    pub max_entities_per_pass: usize,
}

fn default_max_span_len() -> usize {
    super::decode::DEFAULT_MAX_SPAN_LEN
}

fn default_max_answer_len() -> usize {
    super::decode::DEFAULT_MAX_ANSWER_LEN
}

fn default_max_entities() -> usize {
    128
}

impl TaskSpec {
    pub fn new(kind: TaskKind, labels: Vec<String>) -> Self {
        Self {
            kind,
            labels,
            max_span_len: default_max_span_len(),
            max_answer_len: default_max_answer_len(),
            max_entities_per_pass: default_max_entities(),
        }
    }

    /// Label space collected from a dataset (sorted; the relation space
    /// always contains `no_relation`).
    pub fn from_examples(kind: TaskKind, examples: &[TaskExample]) -> Result<Self, TaskError> {
        let mut labels: BTreeSet<String> = BTreeSet::new();
        for ex in examples {
            if ex.kind() != kind {
                return Err(TaskError::Validation(format!("example `{}` is {}, expected {kind}", ex.id(), ex.kind())));
            }
            match ex {
                TaskExample::Typing(x) => labels.extend(x.labels.iter().cloned()),
                TaskExample::Relation(x) => {
                    labels.insert(x.label.clone());
                }
                TaskExample::Ner(x) => labels.extend(x.spans.iter().map(|s| s.label.clone())),
                _ => {}
            }
        }
        if kind == TaskKind::Relation {
            labels.insert(NO_RELATION.into());
        }
        Ok(Self::new(kind, labels.into_iter().collect()))
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let needs_labels = matches!(self.kind, TaskKind::Typing | TaskKind::Relation | TaskKind::Ner);
        if needs_labels && self.labels.is_empty() {
            out.push(format!("{} task needs a non-empty label list", self.kind));
        }
        if !needs_labels && !self.labels.is_empty() {
            out.push(format!("{} task takes no labels", self.kind));
        }
        if self.kind == TaskKind::Ner && self.labels.iter().any(|l| l == NON_ENTITY) {
            out.push(format!("NER label `{NON_ENTITY}` is reserved for the non-entity class"));
        }
        let unique: BTreeSet<&String> = self.labels.iter().collect();
        if unique.len() != self.labels.len() {
            out.push("task labels must be unique".into());
        }
        if self.max_span_len == 0 {
            out.push("max_span_len must be positive".into());
        }
        if self.max_answer_len == 0 {
            out.push("max_answer_len must be positive".into());
        }
        if self.max_entities_per_pass == 0 {
            out.push("max_entities_per_pass must be positive".into());
        }
        out
    }

    fn label_index(&self, label: &str) -> Result<usize, TaskError> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| TaskError::Validation(format!("label `{label}` is not in the {} label space", self.kind)))
    }

    /// Width of the classifier output.
    pub fn num_outputs(&self) -> usize {
        match self.kind {
            TaskKind::Typing | TaskKind::Relation => self.labels.len(),
            TaskKind::Ner => self.labels.len() + 1,
            TaskKind::Cloze | TaskKind::Extractive => 1,
        }
    }
}

/// Entity ids of the relation markers, appended after the pretrained
/// entity vocabulary.
pub fn relation_marker_ids(base_entity_vocab: usize) -> (usize, usize) {
    (base_entity_vocab, base_entity_vocab + 1)
}

/// Adds the head of `spec` to `store` (weights ~ N(0, std), zero biases).
/// For the relation task, B gains [HEAD] and [TAIL] rows copied from the
/// [MASK] entity and `cfg.entity_vocab_size` grows by two.
pub fn init_task_head<T: Scalar>(
    store: &mut ParamStore<T>,
    cfg: &mut ModelConfig,
    spec: &TaskSpec,
    seed: u64,
) -> Result<(), TaskError> {
    let problems = spec.problems();
    if !problems.is_empty() {
        return Err(TaskError::Config(problems.join("; ")));
    }
    use head_names::*;
    let d = cfg.hidden_size;
    let mut init = Initializer::new(seed, cfg.init_std);
    let k = spec.num_outputs();
    let mut put = |store: &mut ParamStore<T>, w: &str, b: &str, rows: usize, cols: usize| -> Result<(), TaskError> {
        upsert(store, w, init.normal(&[rows, cols]))?;
        upsert(store, b, Tensor::zeros(vec![rows]))
    };
    let entity_width = if cfg.use_entity_inputs && spec.kind == TaskKind::Ner { 3 } else { 2 };
    match spec.kind {
        TaskKind::Typing => put(store, TYPING_W, TYPING_B, k, d)?,
        TaskKind::Relation => {
            put(store, RELATION_W, RELATION_B, k, 2 * d)?;
            if cfg.use_entity_inputs {
                add_marker_entities(store, cfg)?;
            }
        }
        TaskKind::Ner => put(store, NER_W, NER_B, k, entity_width * d)?,
        TaskKind::Cloze => put(store, CLOZE_W, CLOZE_B, 1, 2 * d)?,
        TaskKind::Extractive => {
            upsert(store, START_W, init.normal(&[1, d]))?;
            upsert(store, END_W, init.normal(&[1, d]))?;
        }
    }
    Ok(())
}

fn upsert<T: Scalar>(store: &mut ParamStore<T>, name: &str, t: Tensor<T>) -> Result<(), TaskError> {
    if store.contains(name) {
        store.set(name, t)?;
    } else {
        store.insert(name.to_string(), t)?;
    }
    Ok(())
}

fn add_marker_entities<T: Scalar>(store: &mut ParamStore<T>, cfg: &mut ModelConfig) -> Result<(), TaskError> {
    let b = store
        .by_name(crate::model::names::B)
        .ok_or_else(|| TaskError::Validation("model has no entity embedding table".into()))?;
    let (rows, cols) = (b.rows(), b.cols());
    if rows != cfg.entity_vocab_size {
        return Err(TaskError::Validation(format!("entity table has {rows} rows, config says {}", cfg.entity_vocab_size)));
    }
    let mask = b.row(EntitySpecial::Mask.id()).to_vec();
    let mut data = b.data().to_vec();
    data.extend_from_slice(&mask);
    data.extend_from_slice(&mask);
    store.set(crate::model::names::B, Tensor::new(vec![rows + 2, cols], data)?)?;
    cfg.entity_vocab_size += 2;
    Ok(())
}

/// Gold targets in head coordinates.
#[derive(Debug, Clone, PartialEq)]
pub enum Gold {
    /// Multi-hot over type labels.
    Types(Vec<bool>),
    Relation(usize),
    /// Class per candidate span (0 = non-entity).
    Spans(Vec<usize>),
    /// Whether each passage candidate refers to the answer.
    Candidates(Vec<bool>),
    /// Inclusive start/end word positions in the encoder sequence.
    Answer(usize, usize),
}

/// An example converted to encoder ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub id: String,
    pub kind: TaskKind,
    pub word_ids: Vec<usize>,
    /// Task entities (not used for NER, whose entities are the candidates).
    pub entity_ids: Vec<usize>,
    pub entity_positions: Vec<Vec<usize>>,
    /// NER candidate spans (sentence coordinates) or cloze candidate spans
    /// (passage coordinates).
    pub spans: Vec<Span>,
    /// Title of each cloze candidate.
    pub titles: Vec<String>,
    /// Encoder index of the first sentence or passage word.
    pub offset: usize,
    /// Encoder positions eligible as an answer.
    pub passage: std::ops::Range<usize>,
    /// Original sentence or passage words, for answer text.
    pub text: Vec<String>,
    pub gold: Gold,
}

fn ids(vocab: &Vocabulary, words: &[String]) -> Vec<usize> {
    words.iter().map(|w| vocab.word_id(w)).collect()
}

fn single(vocab: &Vocabulary, words: &[String]) -> (Vec<usize>, usize) {
    let mut out = vec![WordSpecial::Cls.id()];
    out.extend(ids(vocab, words));
    out.push(WordSpecial::Sep.id());
    (out, 1)
}

/// `[CLS] q [SEP] [SEP] p [SEP]`; returns ids and the passage offset.
fn pair(vocab: &Vocabulary, q: &[String], p: &[String]) -> (Vec<usize>, usize) {
    let mut out = vec![WordSpecial::Cls.id()];
    out.extend(ids(vocab, q));
    out.push(WordSpecial::Sep.id());
    out.push(WordSpecial::Sep.id());
    let offset = out.len();
    out.extend(ids(vocab, p));
    out.push(WordSpecial::Sep.id());
    (out, offset)
}

/// Builds encoder inputs and gold targets for `ex` under `spec`.
/// `base_entity_vocab` is the pretrained entity vocabulary size, which
/// locates the relation markers.
pub fn prepare(
    ex: &TaskExample,
    spec: &TaskSpec,
    vocab: &Vocabulary,
    base_entity_vocab: usize,
) -> Result<Prepared, TaskError> {
    ex.validate()?;
    if ex.kind() != spec.kind {
        return Err(TaskError::Validation(format!("example `{}` is {}, expected {}", ex.id(), ex.kind(), spec.kind)));
    }
    let mask = EntitySpecial::Mask.id();
    let mut p = Prepared {
        id: ex.id().to_string(),
        kind: spec.kind,
        word_ids: Vec::new(),
        entity_ids: Vec::new(),
        entity_positions: Vec::new(),
        spans: Vec::new(),
        titles: Vec::new(),
        offset: 1,
        passage: 0..0,
        text: Vec::new(),
        gold: Gold::Relation(0),
    };
    match ex {
        TaskExample::Typing(x) => {
            (p.word_ids, p.offset) = single(vocab, &x.words);
            p.entity_ids = vec![mask];
            p.entity_positions = vec![x.target.positions(p.offset)];
            let mut hot = vec![false; spec.labels.len()];
            for l in &x.labels {
                hot[spec.label_index(l)?] = true;
            }
            p.gold = Gold::Types(hot);
            p.text = x.words.clone();
        }
        TaskExample::Relation(x) => {
            (p.word_ids, p.offset) = single(vocab, &x.words);
            let (h, t) = relation_marker_ids(base_entity_vocab);
            p.entity_ids = vec![h, t];
            p.entity_positions = vec![x.head.positions(p.offset), x.tail.positions(p.offset)];
            p.gold = Gold::Relation(spec.label_index(&x.label)?);
            p.text = x.words.clone();
        }
        TaskExample::Ner(x) => {
            (p.word_ids, p.offset) = single(vocab, &x.words);
            p.spans = ner_enumerate(x.words.len(), spec.max_span_len);
            let mut labels = vec![0; p.spans.len()];
            for g in &x.spans {
                let class = spec.label_index(&g.label)? + 1;
                match p.spans.iter().position(|s| *s == g.span()) {
                    Some(i) => labels[i] = class,
                    None => {
                        return Err(TaskError::Validation(format!(
                            "example `{}`: gold span [{}, {}) is longer than max_span_len {}",
                            x.id, g.start, g.end, spec.max_span_len
                        )))
                    }
                }
            }
            p.gold = Gold::Spans(labels);
            p.text = x.words.clone();
        }
        TaskExample::Cloze(x) => {
            (p.word_ids, p.offset) = pair(vocab, &x.question, &x.passage);
            p.entity_ids = vec![mask; x.candidates.len() + 1];
            p.entity_positions.push(vec![x.placeholder + 1]);
            for c in &x.candidates {
                p.entity_positions.push(c.span().positions(p.offset));
                p.spans.push(c.span());
                p.titles.push(c.title.clone());
            }
            p.gold = Gold::Candidates(x.candidates.iter().map(|c| c.title == x.answer).collect());
            p.text = x.passage.clone();
        }
        TaskExample::Extractive(x) => {
            (p.word_ids, p.offset) = pair(vocab, &x.question, &x.passage);
            for e in &x.entities {
                p.entity_ids.push(vocab.entity_id(&e.title));
                p.entity_positions.push(e.span().positions(p.offset));
            }
            p.passage = p.offset..p.offset + x.passage.len();
            p.gold = Gold::Answer(x.answer.start + p.offset, x.answer.end - 1 + p.offset);
            p.text = x.passage.clone();
        }
    }
    if p.passage.is_empty() {
        p.passage = p.offset..p.word_ids.len() - 1;
    }
    Ok(p)
}

fn linear<T: Scalar>(tape: &mut Tape<'_, T>, x: Var, w: &str, b: &str) -> Result<Var, TaskError> {
    let w = tape.param_named(w)?;
    let b = tape.param_named(b)?;
    let y = tape.matmul_nt(x, w)?;
    Ok(tape.add_row(y, b)?)
}

/// Representations of the task entities: the encoder's entity outputs, or,
/// without entity inputs, the mean of the covered word outputs.
fn task_entities<T: Scalar>(
    tape: &mut Tape<'_, T>,
    cfg: &ModelConfig,
    p: &Prepared,
    dropout: Option<&mut Dropout>,
) -> Result<(Var, Var), TaskError> {
    let input = EncoderInput::new(p.word_ids.clone(), p.entity_ids.clone(), p.entity_positions.clone());
    input.validate(cfg)?;
    let enc = encode_on_tape(tape, cfg, &input, dropout)?;
    let ents = match enc.entities {
        Some(e) => e,
        None => tape.segment_mean(enc.words, &p.entity_positions)?,
    };
    Ok((enc.words, ents))
}

fn expect(p: &Prepared, kind: TaskKind) -> Result<(), TaskError> {
    if p.kind != kind {
        return Err(TaskError::Validation(format!("prepared example `{}` is {}, expected {kind}", p.id, p.kind)));
    }
    Ok(())
}

/// Type logits (1 × K) from the target entity.
pub fn typing_forward<T: Scalar>(
    tape: &mut Tape<'_, T>,
    cfg: &ModelConfig,
    p: &Prepared,
    dropout: Option<&mut Dropout>,
) -> Result<Var, TaskError> {
    expect(p, TaskKind::Typing)?;
    if p.entity_ids.len() != 1 {
        return Err(TaskError::Validation(format!("typing needs exactly one target entity, got {}", p.entity_ids.len())));
    }
    let (_, e) = task_entities(tape, cfg, p, dropout)?;
    linear(tape, e, head_names::TYPING_W, head_names::TYPING_B)
}

/// Relation logits (1 × R) from `[h_head ; h_tail]`.
pub fn relation_forward<T: Scalar>(
    tape: &mut Tape<'_, T>,
    cfg: &ModelConfig,
    p: &Prepared,
    dropout: Option<&mut Dropout>,
) -> Result<Var, TaskError> {
    expect(p, TaskKind::Relation)?;
    if p.entity_ids.len() != 2 {
        return Err(TaskError::Validation(format!("relation needs a [HEAD] and a [TAIL] entity, got {}", p.entity_ids.len())));
    }
    let (_, e) = task_entities(tape, cfg, p, dropout)?;
    let h = tape.slice_rows(e, 0, 1)?;
    let t = tape.slice_rows(e, 1, 1)?;
    let x = tape.concat_cols(&[h, t])?;
    linear(tape, x, head_names::RELATION_W, head_names::RELATION_B)
}

/// Per-candidate logits (n × (types + 1)) from `[h_first ; h_last ; h_entity]`,
/// or `[h_first ; h_last]` without entity inputs. Candidates are processed in
/// chunks of `spec.max_entities_per_pass`; each chunk re-encodes the words.
pub fn ner_forward<T: Scalar>(
    tape: &mut Tape<'_, T>,
    cfg: &ModelConfig,
    spec: &TaskSpec,
    p: &Prepared,
    mut dropout: Option<&mut Dropout>,
) -> Result<Var, TaskError> {
    expect(p, TaskKind::Ner)?;
    if let Gold::Spans(g) = &p.gold {
        if g.len() != p.spans.len() {
            return Err(TaskError::Validation(format!("{} gold labels for {} candidate spans", g.len(), p.spans.len())));
        }
    }
    if p.spans.is_empty() {
        return Err(TaskError::Validation(format!("example `{}` has no candidate spans", p.id)));
    }
    let mut parts = Vec::new();
    let chunk = if cfg.use_entity_inputs { spec.max_entities_per_pass } else { p.spans.len() };
    for spans in p.spans.chunks(chunk) {
        let positions: Vec<Vec<usize>> = spans.iter().map(|s| s.positions(p.offset)).collect();
        let input = EncoderInput::new(p.word_ids.clone(), vec![EntitySpecial::Mask.id(); spans.len()], positions);
        input.validate(cfg)?;
        let enc = encode_on_tape(tape, cfg, &input, dropout.as_deref_mut())?;
        let first: Vec<usize> = spans.iter().map(|s| s.start + p.offset).collect();
        let last: Vec<usize> = spans.iter().map(|s| s.end - 1 + p.offset).collect();
        let hf = tape.gather_rows(enc.words, &first)?;
        let hl = tape.gather_rows(enc.words, &last)?;
        let x = match enc.entities {
            Some(e) => tape.concat_cols(&[hf, hl, e])?,
            None => tape.concat_cols(&[hf, hl])?,
        };
        parts.push(x);
    }
    let x = if parts.len() == 1 { parts[0] } else { tape.concat_rows(&parts)? };
    linear(tape, x, head_names::NER_W, head_names::NER_B)
}

/// Relevance scores (n × 1) of the passage candidates from
/// `[h_missing ; h_candidate]`.
pub fn cloze_forward<T: Scalar>(
    tape: &mut Tape<'_, T>,
    cfg: &ModelConfig,
    p: &Prepared,
    dropout: Option<&mut Dropout>,
) -> Result<Var, TaskError> {
    expect(p, TaskKind::Cloze)?;
    let n = p.spans.len();
    if n == 0 || p.entity_ids.len() != n + 1 {
        return Err(TaskError::Validation(format!("example `{}` has no passage entities", p.id)));
    }
    let (_, e) = task_entities(tape, cfg, p, dropout)?;
    let missing = tape.gather_rows(e, &vec![0; n])?;
    let cands = tape.slice_rows(e, 1, n)?;
    let x = tape.concat_cols(&[missing, cands])?;
    linear(tape, x, head_names::CLOZE_W, head_names::CLOZE_B)
}

/// Start and end logits over every word position (2 × m).
pub fn extractive_forward<T: Scalar>(
    tape: &mut Tape<'_, T>,
    cfg: &ModelConfig,
    p: &Prepared,
    dropout: Option<&mut Dropout>,
) -> Result<Var, TaskError> {
    expect(p, TaskKind::Extractive)?;
    if let Gold::Answer(s, e) = p.gold {
        if s < p.passage.start || e >= p.passage.end || s > e {
            return Err(TaskError::Validation(format!("example `{}`: gold span lies outside the passage", p.id)));
        }
    }
    let input = EncoderInput::new(p.word_ids.clone(), p.entity_ids.clone(), p.entity_positions.clone());
    input.validate(cfg)?;
    let enc = encode_on_tape(tape, cfg, &input, dropout)?;
    let ws = tape.param_named(head_names::START_W)?;
    let we = tape.param_named(head_names::END_W)?;
    let s = tape.matmul_nt(ws, enc.words)?;
    let e = tape.matmul_nt(we, enc.words)?;
    Ok(tape.concat_rows(&[s, e])?)
}

/// Logits of the head for `spec.kind`.
pub fn forward<T: Scalar>(
    tape: &mut Tape<'_, T>,
    cfg: &ModelConfig,
    spec: &TaskSpec,
    p: &Prepared,
    dropout: Option<&mut Dropout>,
) -> Result<Var, TaskError> {
    match spec.kind {
        TaskKind::Typing => typing_forward(tape, cfg, p, dropout),
        TaskKind::Relation => relation_forward(tape, cfg, p, dropout),
        TaskKind::Ner => ner_forward(tape, cfg, spec, p, dropout),
        TaskKind::Cloze => cloze_forward(tape, cfg, p, dropout),
        TaskKind::Extractive => extractive_forward(tape, cfg, p, dropout),
    }
}

/// Per-example training loss from the head logits:
/// typing and cloze use binary cross-entropy averaged over outputs,
/// relation and NER use cross-entropy (NER averaged over candidates),
/// extractive sums the start and end cross-entropies.
pub fn task_loss<T: Scalar>(tape: &mut Tape<'_, T>, p: &Prepared, logits: Var) -> Result<Var, TaskError> {
    let v = match &p.gold {
        Gold::Types(hot) | Gold::Candidates(hot) => {
            let y: Vec<T> = hot.iter().map(|&b| if b { T::one() } else { T::zero() }).collect();
            let s = tape.bce_with_logits_sum(logits, &y)?;
            tape.scale(s, T::of(1.0 / y.len().max(1) as f64))?
        }
        Gold::Relation(r) => tape.cross_entropy_sum(logits, &[*r])?,
        Gold::Spans(labels) => {
            let s = tape.cross_entropy_sum(logits, labels)?;
            tape.scale(s, T::of(1.0 / labels.len().max(1) as f64))?
        }
        Gold::Answer(s, e) => tape.cross_entropy_sum(logits, &[*s, *e])?,
    };
    Ok(v)
}

/// A decoded prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Prediction {
    Labels(Vec<String>),
    Label(String),
    Spans(Vec<TypedSpan>),
    Text(String),
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub example_id: String,
    pub prediction: Prediction,
    pub scores: Vec<f64>,
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Decodes head logits into a prediction record.
pub fn predict(spec: &TaskSpec, p: &Prepared, logits: &Tensor<f64>) -> PredictionRecord {
    let flat = logits.data().to_vec();
    let prediction = match spec.kind {
        TaskKind::Typing => {
            Prediction::Labels(spec.labels.iter().zip(&flat).filter(|(_, &l)| l > 0.0).map(|(n, _)| n.clone()).collect())
        }
        TaskKind::Relation => Prediction::Label(spec.labels[argmax(&flat)].clone()),
        TaskKind::Ner => {
            let preds: Vec<SpanPrediction> = p
                .spans
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let row = logits.row(i);
                    let label = argmax(row);
                    SpanPrediction { span: *s, label, logit: row[label] }
                })
                .collect();
            Prediction::Spans(
                ner_decode(&preds)
                    .into_iter()
                    .map(|sp| TypedSpan { start: sp.span.start, end: sp.span.end, label: spec.labels[sp.label - 1].clone() })
                    .collect(),
            )
        }
        TaskKind::Cloze => Prediction::Text(p.titles[argmax(&flat)].clone()),
        TaskKind::Extractive => {
            let (start, end) = (logits.row(0), logits.row(1));
            let text = match extractive_decode(start, end, p.passage.clone(), spec.max_answer_len) {
                Some((s, e)) => p.text[s - p.offset..=e - p.offset].join(" "),
                None => String::new(),
            };
            Prediction::Text(text)
        }
    };
    let scores = match spec.kind {
        TaskKind::Ner => Vec::new(),
        _ => flat,
    };
    PredictionRecord { example_id: p.id.clone(), prediction, scores }
}
