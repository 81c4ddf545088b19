use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::TrainingSequence;
use crate::numerics::{ParamStore, Scalar, Tape, Tensor, Var};

use super::attention::{attend, TokenType};
use super::config::ModelConfig;
use super::params::names;
use super::ModelError;

/// Word and entity tokens of one sequence. `*_keep[i] == false` marks padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderInput {
    pub word_ids: Vec<usize>,
    pub entity_ids: Vec<usize>,
    pub entity_positions: Vec<Vec<usize>>,
    pub word_keep: Vec<bool>,
    pub entity_keep: Vec<bool>,
}

impl EncoderInput {
    pub fn new(word_ids: Vec<usize>, entity_ids: Vec<usize>, entity_positions: Vec<Vec<usize>>) -> Self {
        let word_keep = vec![true; word_ids.len()];
        let entity_keep = vec![true; entity_ids.len()];
        Self { word_ids, entity_ids, entity_positions, word_keep, entity_keep }
    }

    pub fn words_only(word_ids: Vec<usize>) -> Self {
        Self::new(word_ids, Vec::new(), Vec::new())
    }

    pub fn from_sequence(seq: &TrainingSequence) -> Self {
        Self::new(seq.word_ids.clone(), seq.entity_ids.clone(), seq.entity_positions.clone())
    }

    /// Appends padding up to the given lengths. Pad entities sit on position 0.
    pub fn padded(mut self, words: usize, entities: usize, pad_word: usize, pad_entity: usize) -> Self {
        while self.word_ids.len() < words {
            self.word_ids.push(pad_word);
            self.word_keep.push(false);
        }
        while self.entity_ids.len() < entities {
            self.entity_ids.push(pad_entity);
            self.entity_positions.push(vec![0]);
            self.entity_keep.push(false);
        }
        self
    }

    pub fn num_words(&self) -> usize {
        self.word_ids.len()
    }

    pub fn num_entities(&self) -> usize {
        self.entity_ids.len()
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Validation(m));
        let m = self.word_ids.len();
        if m == 0 {
            return bad("sequence has no words".into());
        }
        if m > cfg.max_positions {
            return bad(format!("{m} words exceed max_positions {}", cfg.max_positions));
        }
        if self.word_keep.len() != m || self.entity_keep.len() != self.entity_ids.len() {
            return bad("padding mask length differs from token count".into());
        }
        if let Some(w) = self.word_ids.iter().find(|&&w| w >= cfg.word_vocab_size) {
            return bad(format!("word id {w} out of range for V_w = {}", cfg.word_vocab_size));
        }
        if !cfg.use_entity_inputs {
            return Ok(());
        }
        if self.entity_positions.len() != self.entity_ids.len() {
            return bad(format!(
                "{} entity ids but {} position lists",
                self.entity_ids.len(),
                self.entity_positions.len()
            ));
        }
        if let Some(e) = self.entity_ids.iter().find(|&&e| e >= cfg.entity_vocab_size) {
            return bad(format!("entity id {e} out of range for V_e = {}", cfg.entity_vocab_size));
        }
        for (j, pos) in self.entity_positions.iter().enumerate() {
            if pos.is_empty() {
                return bad(format!("entity {j} has an empty position list"));
            }
            if let Some(p) = pos.iter().find(|&&p| p >= m) {
                return bad(format!("entity {j} position {p} beyond {m} words"));
            }
        }
        if self.word_keep.iter().all(|k| !k) {
            return bad("every word is padding".into());
        }
        Ok(())
    }

    /// Token types in encoder order: words first, then entities.
    pub fn token_types(&self, cfg: &ModelConfig) -> Vec<TokenType> {
        let n = if cfg.use_entity_inputs { self.entity_ids.len() } else { 0 };
        let mut t = vec![TokenType::Word; self.word_ids.len()];
        t.extend(std::iter::repeat_n(TokenType::Entity, n));
        t
    }

    fn keep(&self, cfg: &ModelConfig) -> Vec<bool> {
        let mut k = self.word_keep.clone();
        if cfg.use_entity_inputs {
            k.extend_from_slice(&self.entity_keep);
        }
        k
    }
}

/// Inverted dropout over hidden activations, drawn from its own stream.
pub struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Self {
        Self { rate, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn apply<T: Scalar>(&mut self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var, ModelError> {
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let shape = tape.shape(x).to_vec();
        let n: usize = shape.iter().product();
        let scale = T::of(1.0 / (1.0 - self.rate));
        let mask: Vec<T> = (0..n)
            .map(|_| if self.rng.random::<f64>() < self.rate { T::zero() } else { scale })
            .collect();
        Ok(tape.mul_const(x, Tensor::new(shape, mask)?)?)
    }
}

/// Encoder outputs recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct EncodedVars {
    /// m × D.
    pub words: Var,
    /// n × D; `None` when no entities are fed.
    pub entities: Option<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoded<T> {
    pub h_words: Tensor<T>,
    pub h_entities: Tensor<T>,
}

/// Input vectors before the embedding layer norm: rows 0..m are words,
/// m..m+n entities.
pub fn embed_raw<T: Scalar>(tape: &mut Tape<'_, T>, cfg: &ModelConfig, input: &EncoderInput) -> Result<Var, ModelError> {
    input.validate(cfg)?;
    let m = input.num_words();
    let a = tape.param_named(names::A)?;
    let c = tape.param_named(names::C)?;
    let tok = tape.gather_rows(a, &input.word_ids)?;
    let positions: Vec<usize> = (0..m).collect();
    let pos = tape.gather_rows(c, &positions)?;
    let words = tape.add(tok, pos)?;
    if !cfg.use_entity_inputs || input.entity_ids.is_empty() {
        return Ok(words);
    }
    let b = tape.param_named(names::B)?;
    let u = tape.param_named(names::U)?;
    let dpos = tape.param_named(names::DPOS)?;
    let e_type = tape.param_named(names::E_TYPE)?;
    let small = tape.gather_rows(b, &input.entity_ids)?;
    let tok = tape.matmul(small, u)?;
    let pos = tape.segment_mean(dpos, &input.entity_positions)?;
    let sum = tape.add(tok, pos)?;
    let ents = tape.add_row(sum, e_type)?;
    Ok(tape.concat_rows(&[words, ents])?)
}

/// Embedding layer output (after layer norm), rows ordered words then entities.
pub fn embed<T: Scalar>(tape: &mut Tape<'_, T>, cfg: &ModelConfig, input: &EncoderInput) -> Result<Var, ModelError> {
    let raw = embed_raw(tape, cfg, input)?;
    let g = tape.param_named(names::EMB_LN_GAIN)?;
    let b = tape.param_named(names::EMB_LN_BIAS)?;
    Ok(tape.layer_norm(raw, g, b, cfg.layer_norm_eps)?)
}

fn ffn<T: Scalar>(tape: &mut Tape<'_, T>, layer: usize, x: Var) -> Result<Var, ModelError> {
    let p = |leaf: &str| names::layer(layer, leaf);
    let w1 = tape.param_named(&p(names::FFN_IN_W))?;
    let b1 = tape.param_named(&p(names::FFN_IN_B))?;
    let w2 = tape.param_named(&p(names::FFN_OUT_W))?;
    let b2 = tape.param_named(&p(names::FFN_OUT_B))?;
    let h = tape.matmul_nt(x, w1)?;
    let h = tape.add_row(h, b1)?;
    let h = tape.gelu(h)?;
    let y = tape.matmul_nt(h, w2)?;
    Ok(tape.add_row(y, b2)?)
}

fn add_norm<T: Scalar>(
    tape: &mut Tape<'_, T>,
    cfg: &ModelConfig,
    layer: usize,
    which: (&str, &str),
    x: Var,
    y: Var,
) -> Result<Var, ModelError> {
    let s = tape.add(x, y)?;
    let g = tape.param_named(&names::layer(layer, which.0))?;
    let b = tape.param_named(&names::layer(layer, which.1))?;
    Ok(tape.layer_norm(s, g, b, cfg.layer_norm_eps)?)
}

/// One post-layer-norm transformer block.
pub fn encoder_layer<T: Scalar>(
    tape: &mut Tape<'_, T>,
    cfg: &ModelConfig,
    layer: usize,
    x: Var,
    types: &[TokenType],
    keep: Option<&[bool]>,
    mut dropout: Option<&mut Dropout>,
) -> Result<Var, ModelError> {
    let mut a = attend(tape, cfg, layer, x, types, keep)?;
    if let Some(d) = dropout.as_deref_mut() {
        a = d.apply(tape, a)?;
    }
    let x = add_norm(tape, cfg, layer, (names::ATTN_LN_GAIN, names::ATTN_LN_BIAS), x, a)?;
    let mut f = ffn(tape, layer, x)?;
    if let Some(d) = dropout {
        f = d.apply(tape, f)?;
    }
    add_norm(tape, cfg, layer, (names::FFN_LN_GAIN, names::FFN_LN_BIAS), x, f)
}

/// Full encoder pass; returns h_words and h_entities as tape variables.
pub fn encode_on_tape<T: Scalar>(
    tape: &mut Tape<'_, T>,
    cfg: &ModelConfig,
    input: &EncoderInput,
    mut dropout: Option<&mut Dropout>,
) -> Result<EncodedVars, ModelError> {
    let mut x = embed(tape, cfg, input)?;
    if let Some(d) = dropout.as_deref_mut() {
        x = d.apply(tape, x)?;
    }
    let types = input.token_types(cfg);
    let keep = input.keep(cfg);
    let keep = if keep.iter().all(|&k| k) { None } else { Some(keep.as_slice()) };
    for layer in 0..cfg.num_layers {
        x = encoder_layer(tape, cfg, layer, x, &types, keep, dropout.as_deref_mut())?;
    }
    let m = input.num_words();
    let n = types.len() - m;
    if n == 0 {
        return Ok(EncodedVars { words: x, entities: None });
    }
    let words = tape.slice_rows(x, 0, m)?;
    let entities = tape.slice_rows(x, m, n)?;
    Ok(EncodedVars { words, entities: Some(entities) })
}

/// Deterministic inference pass (no dropout).
pub fn encode<T: Scalar>(store: &ParamStore<T>, cfg: &ModelConfig, input: &EncoderInput) -> Result<Encoded<T>, ModelError> {
    let mut tape = Tape::new(store);
    let out = encode_on_tape(&mut tape, cfg, input, None)?;
    let h_words = tape.value(out.words).clone();
    let h_entities = match out.entities {
        Some(e) => tape.value(e).clone(),
        None => Tensor::zeros(vec![0, cfg.hidden_size]),
    };
    Ok(Encoded { h_words, h_entities })
}
