use crate::model::names;
use crate::numerics::{ParamStore, Scalar, Tape, Tensor, Var};

use super::PretrainError;

/// Masked-word logits for rows of `h` (k × D): dense, GELU, layer norm,
/// then the transposed word embedding A plus an output bias.
pub fn mlm_logits<T: Scalar>(tape: &mut Tape<'_, T>, h: Var, eps: f64) -> Result<Var, PretrainError> {
    let w = tape.param_named(names::MLM_DENSE_W)?;
    let b = tape.param_named(names::MLM_DENSE_B)?;
    let g = tape.param_named(names::MLM_LN_GAIN)?;
    let beta = tape.param_named(names::MLM_LN_BIAS)?;
    let a = tape.param_named(names::A)?;
    let out_b = tape.param_named(names::MLM_BIAS)?;
    let x = tape.matmul_nt(h, w)?;
    let x = tape.add_row(x, b)?;
    let x = tape.gelu(x)?;
    let x = tape.layer_norm(x, g, beta, eps)?;
    let logits = tape.matmul_nt(x, a)?;
    Ok(tape.add_row(logits, out_b)?)
}

/// Masked-entity logits for rows of `h` (k × D):
/// m = layer_norm(gelu(W_h h + b_h)), logits = B (T m) + b_o.
pub fn entity_logits<T: Scalar>(tape: &mut Tape<'_, T>, h: Var, eps: f64) -> Result<Var, PretrainError> {
    let w = tape.param_named(names::ENT_W_H)?;
    let b = tape.param_named(names::ENT_B_H)?;
    let g = tape.param_named(names::ENT_LN_GAIN)?;
    let beta = tape.param_named(names::ENT_LN_BIAS)?;
    let t = tape.param_named(names::ENT_T)?;
    let emb = tape.param_named(names::B)?;
    let out_b = tape.param_named(names::ENT_B_O)?;
    let x = tape.matmul_nt(h, w)?;
    let x = tape.add_row(x, b)?;
    let x = tape.gelu(x)?;
    let m = tape.layer_norm(x, g, beta, eps)?;
    let tm = tape.matmul_nt(m, t)?;
    let logits = tape.matmul_nt(tm, emb)?;
    Ok(tape.add_row(logits, out_b)?)
}

/// Entity prediction logits for a single representation vector.
pub fn entity_prediction_logits<T: Scalar>(store: &ParamStore<T>, h_e: &[T], eps: f64) -> Result<Vec<T>, PretrainError> {
    let mut tape = Tape::new(store);
    let h = tape.constant(Tensor::new(vec![1, h_e.len()], h_e.to_vec())?);
    let logits = entity_logits(&mut tape, h, eps)?;
    Ok(tape.value(logits).data().to_vec())
}
