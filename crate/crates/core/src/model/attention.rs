use crate::numerics::{Scalar, Tape, Var};

use super::config::{AttentionMode, ModelConfig};
use super::params::names;
use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenType {
    Word,
    Entity,
}

impl TokenType {
    /// 0 = word, 1 = entity.
    pub fn from_flag(flag: u8) -> Result<Self, ModelError> {
        match flag {
            0 => Ok(Self::Word),
            1 => Ok(Self::Entity),
            other => Err(ModelError::Validation(format!("unknown token type flag {other}"))),
        }
    }

    /// Index of the query matrix used for a (query, key) pair:
    /// 0 = Q, 1 = Q_w2e, 2 = Q_e2w, 3 = Q_e2e.
    pub fn query_index(query: TokenType, key: TokenType) -> usize {
        match (query, key) {
            (TokenType::Word, TokenType::Word) => 0,
            (TokenType::Word, TokenType::Entity) => 1,
            (TokenType::Entity, TokenType::Word) => 2,
            (TokenType::Entity, TokenType::Entity) => 3,
        }
    }
}

/// Per-layer projections of one sequence, computed once and sliced per head.
pub(crate) struct Projections {
    /// Row i: the query that row i presents to word keys.
    to_words: Var,
    /// Row i: the query that row i presents to entity keys (absent when no
    /// entity-aware scoring is needed).
    to_entities: Option<Var>,
    keys: Var,
    values: Var,
}

fn row_choice(types: &[TokenType], width: usize, pick: impl Fn(TokenType) -> u8) -> Vec<u8> {
    let mut out = Vec::with_capacity(types.len() * width);
    for &t in types {
        out.extend(std::iter::repeat_n(pick(t), width));
    }
    out
}

pub(crate) fn project<T: Scalar>(
    tape: &mut Tape<'_, T>,
    cfg: &ModelConfig,
    layer: usize,
    x: Var,
    types: &[TokenType],
) -> Result<Projections, ModelError> {
    let p = |leaf: &str| names::layer(layer, leaf);
    let q = tape.param_named(&p(names::Q))?;
    let k = tape.param_named(&p(names::K))?;
    let v = tape.param_named(&p(names::V))?;
    let qx = tape.matmul_nt(x, q)?;
    let keys = tape.matmul_nt(x, k)?;
    let values = tape.matmul_nt(x, v)?;
    let has_entities = types.contains(&TokenType::Entity);
    if cfg.attention_mode == AttentionMode::Original || !has_entities {
        return Ok(Projections { to_words: qx, to_entities: None, keys, values });
    }
    let w2e = tape.param_named(&p(names::Q_W2E))?;
    let e2w = tape.param_named(&p(names::Q_E2W))?;
    let e2e = tape.param_named(&p(names::Q_E2E))?;
    let w2e_x = tape.matmul_nt(x, w2e)?;
    let e2w_x = tape.matmul_nt(x, e2w)?;
    let e2e_x = tape.matmul_nt(x, e2e)?;
    let d = cfg.hidden_size;
    let is_entity = |t: TokenType| u8::from(t == TokenType::Entity);
    let to_words = tape.select(&[qx, e2w_x], row_choice(types, d, is_entity))?;
    let to_entities = tape.select(&[w2e_x, e2e_x], row_choice(types, d, is_entity))?;
    Ok(Projections { to_words, to_entities: Some(to_entities), keys, values })
}

/// Scaled scores e_ij of one head, before masking and softmax.
pub(crate) fn head_scores<T: Scalar>(
    tape: &mut Tape<'_, T>,
    cfg: &ModelConfig,
    proj: &Projections,
    types: &[TokenType],
    head: usize,
) -> Result<Var, ModelError> {
    let l = cfg.head_dim;
    let k_h = tape.slice_cols(proj.keys, head * l, l)?;
    let q_w = tape.slice_cols(proj.to_words, head * l, l)?;
    let s_w = tape.matmul_nt(q_w, k_h)?;
    let raw = match proj.to_entities {
        None => s_w,
        Some(to_e) => {
            let q_e = tape.slice_cols(to_e, head * l, l)?;
            let s_e = tape.matmul_nt(q_e, k_h)?;
            let k = types.len();
            let mut choice = Vec::with_capacity(k * k);
            for _ in 0..k {
                choice.extend(types.iter().map(|&t| u8::from(t == TokenType::Entity)));
            }
            tape.select(&[s_w, s_e], choice)?
        }
    };
    Ok(tape.scale(raw, T::of(1.0 / (l as f64).sqrt()))?)
}

/// Entity-aware (or original) multi-head attention followed by the output
/// projection. `keep[j] == false` removes key j from every softmax.
pub fn attend<T: Scalar>(
    tape: &mut Tape<'_, T>,
    cfg: &ModelConfig,
    layer: usize,
    x: Var,
    types: &[TokenType],
    keep: Option<&[bool]>,
) -> Result<Var, ModelError> {
    let proj = project(tape, cfg, layer, x, types)?;
    let l = cfg.head_dim;
    let mut heads = Vec::with_capacity(cfg.num_heads);
    for h in 0..cfg.num_heads {
        let scores = head_scores(tape, cfg, &proj, types, h)?;
        let probs = tape.softmax_rows(scores, keep)?;
        let v_h = tape.slice_cols(proj.values, h * l, l)?;
        heads.push(tape.matmul(probs, v_h)?);
    }
    let joined = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? };
    let w = tape.param_named(&names::layer(layer, names::ATTN_OUT_W))?;
    let b = tape.param_named(&names::layer(layer, names::ATTN_OUT_B))?;
    let y = tape.matmul_nt(joined, w)?;
    Ok(tape.add_row(y, b)?)
}

/// Pre-softmax score matrix of one head for inputs `x` (k × D).
pub fn attention_scores<T: Scalar>(
    tape: &mut Tape<'_, T>,
    cfg: &ModelConfig,
    layer: usize,
    x: Var,
    types: &[TokenType],
    head: usize,
) -> Result<Var, ModelError> {
    if head >= cfg.num_heads {
        return Err(ModelError::Validation(format!("head {head} of {}", cfg.num_heads)));
    }
    if tape.shape(x) != [types.len(), cfg.hidden_size] {
        return Err(ModelError::Validation(format!(
            "{} token types for inputs of shape {:?}",
            types.len(),
            tape.shape(x)
        )));
    }
    let proj = project(tape, cfg, layer, x, types)?;
    head_scores(tape, cfg, &proj, types, head)
}
