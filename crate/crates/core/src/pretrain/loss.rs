use crate::model::{encode_on_tape, Dropout, EncoderInput, ModelConfig};
use crate::numerics::{Gradients, ParamStore, Scalar, Tape, Tensor, Var};

use super::heads::{entity_logits, mlm_logits};
use super::masking::MaskingPlan;
use super::PretrainError;

/// An uncorrupted input paired with its masking plan.
#[derive(Debug, Clone)]
pub struct MaskedExample {
    pub input: EncoderInput,
    pub plan: MaskingPlan,
}

/// Loss components summed over a batch. Each term is a mean over masked
/// tokens of the whole batch; `loss = mlm_loss + entity_loss`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    pub mlm_loss: f64,
    pub entity_loss: f64,
    pub mlm_correct: usize,
    pub mlm_count: usize,
    pub entity_correct: usize,
    pub entity_count: usize,
    /// True when the batch had no masked token at all (loss 0 by convention).
    pub degenerate: bool,
}

impl LossReport {
    pub fn mlm_accuracy(&self) -> f64 {
        ratio(self.mlm_correct, self.mlm_count)
    }

    pub fn entity_accuracy(&self) -> f64 {
        ratio(self.entity_correct, self.entity_count)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn correct<T: Scalar>(logits: &Tensor<T>, gold: &[usize]) -> usize {
    gold.iter().enumerate().filter(|&(r, &g)| argmax(logits.row(r)) == g).count()
}

#[derive(Debug, Clone, Copy)]
pub struct LossOptions {
    pub entity_loss_enabled: bool,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self { entity_loss_enabled: true }
    }
}

struct SequenceTerms {
    loss: Option<Var>,
    mlm_sum: f64,
    entity_sum: f64,
    mlm_correct: usize,
    entity_correct: usize,
}

#[allow(clippy::too_many_arguments)]
fn sequence_terms<T: Scalar>(
    tape: &mut Tape<'_, T>,
    cfg: &ModelConfig,
    ex: &MaskedExample,
    opts: LossOptions,
    word_denom: usize,
    entity_denom: usize,
    dropout: Option<&mut Dropout>,
) -> Result<SequenceTerms, PretrainError> {
    let use_entities = opts.entity_loss_enabled && cfg.use_entity_inputs;
    ex.plan.validate(&ex.input, cfg.word_vocab_size, cfg.entity_vocab_size)?;
    let corrupted = ex.plan.apply(&ex.input);
    let enc = encode_on_tape(tape, cfg, &corrupted, dropout)?;
    let mut terms = SequenceTerms { loss: None, mlm_sum: 0.0, entity_sum: 0.0, mlm_correct: 0, entity_correct: 0 };
    if !ex.plan.words.is_empty() {
        let rows: Vec<usize> = ex.plan.words.iter().map(|w| w.position).collect();
        let gold: Vec<usize> = ex.plan.words.iter().map(|w| w.gold).collect();
        let h = tape.gather_rows(enc.words, &rows)?;
        let logits = mlm_logits(tape, h, cfg.layer_norm_eps)?;
        terms.mlm_correct = correct(tape.value(logits), &gold);
        let ce = tape.cross_entropy_sum(logits, &gold)?;
        terms.mlm_sum = tape.value(ce).item().to_f64().unwrap_or(f64::NAN);
        terms.loss = Some(tape.scale(ce, T::of(1.0 / word_denom as f64))?);
    }
    if use_entities && !ex.plan.entities.is_empty() {
        let ents = enc.entities.expect("masked entities imply entity inputs");
        let rows: Vec<usize> = ex.plan.entities.iter().map(|e| e.index).collect();
        let gold: Vec<usize> = ex.plan.entities.iter().map(|e| e.gold).collect();
        let h = tape.gather_rows(ents, &rows)?;
        let logits = entity_logits(tape, h, cfg.layer_norm_eps)?;
        terms.entity_correct = correct(tape.value(logits), &gold);
        let ce = tape.cross_entropy_sum(logits, &gold)?;
        terms.entity_sum = tape.value(ce).item().to_f64().unwrap_or(f64::NAN);
        let scaled = tape.scale(ce, T::of(1.0 / entity_denom as f64))?;
        terms.loss = Some(match terms.loss {
            Some(l) => tape.add(l, scaled)?,
            None => scaled,
        });
    }
    Ok(terms)
}

/// Joint masked-word and masked-entity loss over a batch, with parameter
/// gradients. `dropout_seed(i)` gives the dropout stream for example `i`;
/// `None` disables dropout.
pub fn pretrain_loss<T: Scalar>(
    store: &ParamStore<T>,
    cfg: &ModelConfig,
    batch: &[MaskedExample],
    opts: LossOptions,
    dropout_seed: Option<&dyn Fn(usize) -> u64>,
    with_grads: bool,
) -> Result<(LossReport, Option<Gradients<T>>), PretrainError> {
    let use_entities = opts.entity_loss_enabled && cfg.use_entity_inputs;
    let word_denom: usize = batch.iter().map(|e| e.plan.words.len()).sum();
    let entity_denom: usize = if use_entities { batch.iter().map(|e| e.plan.entities.len()).sum() } else { 0 };
    let mut report = LossReport {
        mlm_count: word_denom,
        entity_count: entity_denom,
        degenerate: word_denom + entity_denom == 0,
        ..Default::default()
    };
    let mut grads = with_grads.then(|| Gradients::empty(store.len()));
    for (i, ex) in batch.iter().enumerate() {
        let masked_here = ex.plan.words.len() + if use_entities { ex.plan.entities.len() } else { 0 };
        if masked_here == 0 {
            ex.plan.validate(&ex.input, cfg.word_vocab_size, cfg.entity_vocab_size)?;
            continue;
        }
        let mut tape = Tape::new(store);
        let mut dropout = dropout_seed.map(|f| Dropout::new(cfg.dropout, f(i)));
        let terms = sequence_terms(&mut tape, cfg, ex, opts, word_denom.max(1), entity_denom.max(1), dropout.as_mut())?;
        report.mlm_loss += terms.mlm_sum;
        report.entity_loss += terms.entity_sum;
        report.mlm_correct += terms.mlm_correct;
        report.entity_correct += terms.entity_correct;
        if let (Some(g), Some(loss)) = (grads.as_mut(), terms.loss) {
            g.accumulate(tape.backward(loss)?);
        }
    }
    if word_denom > 0 {
        report.mlm_loss /= word_denom as f64;
    }
    if entity_denom > 0 {
        report.entity_loss /= entity_denom as f64;
    }
    report.loss = report.mlm_loss + report.entity_loss;
    Ok((report, grads))
}

/// The batch loss of [`pretrain_loss`] built on a single tape, without
/// dropout. Returns `None` for a degenerate batch.
pub fn pretrain_loss_on_tape<T: Scalar>(
    tape: &mut Tape<'_, T>,
    cfg: &ModelConfig,
    batch: &[MaskedExample],
    opts: LossOptions,
) -> Result<Option<Var>, PretrainError> {
    let use_entities = opts.entity_loss_enabled && cfg.use_entity_inputs;
    let word_denom: usize = batch.iter().map(|e| e.plan.words.len()).sum();
    let entity_denom: usize = if use_entities { batch.iter().map(|e| e.plan.entities.len()).sum() } else { 0 };
    let mut total: Option<Var> = None;
    for ex in batch {
        let terms = sequence_terms(tape, cfg, ex, opts, word_denom.max(1), entity_denom.max(1), None)?;
        if let Some(l) = terms.loss {
            total = Some(match total {
                Some(t) => tape.add(t, l)?,
                None => l,
            });
        }
    }
    Ok(total)
}
