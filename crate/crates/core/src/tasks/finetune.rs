use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::model::{copy_query_into_extra, names, AttentionMode, Dropout, ModelConfig};
use crate::numerics::{Gradients, ParamStore, Scalar, Tape, Tensor};
use crate::pretrain::{adamw_step, lr_schedule, AdamWConfig, OptimizerState};
use crate::seeds::{self, stream};

use super::example::{TaskExample, TaskKind};
use super::heads::{forward, init_task_head, predict, prepare, task_loss, Prediction, PredictionRecord, Prepared, TaskSpec, NO_RELATION};
use super::metrics::{answer_scores, relation_prf, set_prf, Scores};
use super::TaskError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_ratio: f64,
    pub dropout: f64,
    pub optimizer: AdamWConfig,
    pub attention_mode: AttentionMode,
    /// Dev evaluation period in steps; 0 evaluates only at the end.
    pub eval_interval: usize,
    /// Evaluations without improvement before stopping; 0 disables.
    pub patience: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 8,
            peak_lr: 1e-3,
            warmup_ratio: 0.06,
            dropout: 0.1,
            optimizer: AdamWConfig::default(),
            attention_mode: AttentionMode::EntityAware,
            eval_interval: 100,
            patience: 3,
        }
    }
}

impl FinetuneConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.steps == 0 {
            out.push("finetune.steps must be positive".into());
        }
        if self.batch_size == 0 {
            out.push("finetune.batch_size must be positive".into());
        }
        if !(self.peak_lr >= 0.0 && self.peak_lr.is_finite()) {
            out.push(format!("finetune.peak_lr ({}) must be a non-negative number", self.peak_lr));
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            out.push(format!("finetune.warmup_ratio ({}) must be in [0, 1)", self.warmup_ratio));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            out.push(format!("finetune.dropout ({}) must be in [0, 1)", self.dropout));
        }
        out.extend(self.optimizer.problems());
        out
    }

    fn lr(&self, step: usize) -> f64 {
        let warmup = (self.steps as f64 * self.warmup_ratio).round() as usize;
        let warmup = warmup.min(self.steps - 1);
        lr_schedule((step + 1).min(self.steps), warmup, self.steps, self.peak_lr).expect("warmup < steps")
    }
}

/// Scores a set of predictions against the examples they were made for.
/// The primary metric is F1 for typing, relation and NER, exact match for
/// cloze and extractive.
pub fn score(kind: TaskKind, examples: &[TaskExample], preds: &[Prediction]) -> Result<Scores, TaskError> {
    if examples.len() != preds.len() {
        return Err(TaskError::Validation(format!("{} predictions for {} examples", preds.len(), examples.len())));
    }
    let mismatch = |id: &str| TaskError::Validation(format!("prediction for `{id}` does not fit the {kind} task"));
    match kind {
        TaskKind::Typing | TaskKind::Ner => {
            let mut p: Vec<BTreeSet<String>> = Vec::new();
            let mut g: Vec<BTreeSet<String>> = Vec::new();
            for (ex, pr) in examples.iter().zip(preds) {
                match (ex, pr) {
                    (TaskExample::Typing(x), Prediction::Labels(l)) => {
                        p.push(l.iter().cloned().collect());
                        g.push(x.labels.iter().cloned().collect());
                    }
                    (TaskExample::Ner(x), Prediction::Spans(s)) => {
                        let key = |s: &super::example::TypedSpan| format!("{}:{}:{}", s.start, s.end, s.label);
                        p.push(s.iter().map(key).collect());
                        g.push(x.spans.iter().map(key).collect());
                    }
                    _ => return Err(mismatch(ex.id())),
                }
            }
            Ok(set_prf(&p, &g))
        }
        TaskKind::Relation => {
            let mut p = Vec::new();
            let mut g = Vec::new();
            for (ex, pr) in examples.iter().zip(preds) {
                match (ex, pr) {
                    (TaskExample::Relation(x), Prediction::Label(l)) => {
                        p.push(l.clone());
                        g.push(x.label.clone());
                    }
                    _ => return Err(mismatch(ex.id())),
                }
            }
            Ok(relation_prf(&p, &g, NO_RELATION))
        }
        TaskKind::Cloze | TaskKind::Extractive => {
            let mut p = Vec::new();
            let mut g = Vec::new();
            for (ex, pr) in examples.iter().zip(preds) {
                match (ex, pr) {
                    (TaskExample::Cloze(x), Prediction::Text(t)) => {
                        p.push(t.clone());
                        g.push(x.answer.clone());
                    }
                    (TaskExample::Extractive(x), Prediction::Text(t)) => {
                        p.push(t.clone());
                        g.push(x.passage[x.answer.start..x.answer.end].join(" "));
                    }
                    _ => return Err(mismatch(ex.id())),
                }
            }
            Ok(answer_scores(&p, &g))
        }
    }
}

pub fn primary(kind: TaskKind, s: &Scores) -> f64 {
    match kind {
        TaskKind::Cloze | TaskKind::Extractive => s.exact_match.unwrap_or(0.0),
        _ => s.f1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub train_loss: f64,
    pub dev_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub best_step: usize,
    pub best_score: f64,
    pub steps_run: usize,
    pub stopped_early: bool,
    pub history: Vec<EvalRecord>,
}

/// A pretrained encoder with one task head.
pub struct FineTuner<T: Scalar> {
    pub model: ModelConfig,
    pub spec: TaskSpec,
    pub config: FinetuneConfig,
    pub params: ParamStore<T>,
    /// Pretrained entity vocabulary size (before task markers).
    pub base_entity_vocab: usize,
    pub seed: u64,
}

impl<T: Scalar> FineTuner<T> {
    /// Takes the encoder parameters of `pretrained` (prediction heads are
    /// dropped), switches to the configured attention mode and adds a fresh
    /// task head. Moving from an original-mode model to entity-aware
    /// attention starts every extra query as a copy of Q.
    pub fn new(
        pretrained: &ParamStore<T>,
        model: &ModelConfig,
        spec: TaskSpec,
        config: FinetuneConfig,
        seed: u64,
    ) -> Result<Self, TaskError> {
        let problems = config.problems();
        if !problems.is_empty() {
            return Err(TaskError::Config(problems.join("; ")));
        }
        let mut cfg = model.clone();
        cfg.attention_mode = config.attention_mode;
        cfg.dropout = config.dropout;
        let mut params = pretrained.filtered(|n| !n.starts_with("heads.") && !n.starts_with("task."));
        let has_extra = params.contains(&names::layer(0, names::EXTRA_QUERIES[0]));
        let pretrained_aware = model.attention_mode == AttentionMode::EntityAware && has_extra;
        if cfg.attention_mode == AttentionMode::EntityAware && !pretrained_aware {
            copy_query_into_extra(&mut params, &cfg)?;
        }
        if cfg.attention_mode == AttentionMode::Original {
            params = params.filtered(|n| !names::EXTRA_QUERIES.iter().any(|q| n.ends_with(q)));
        }
        let base_entity_vocab = model.entity_vocab_size;
        init_task_head(&mut params, &mut cfg, &spec, seeds::derive(seed, &[stream::INIT, 1]))?;
        Ok(Self { model: cfg, spec, config, params, base_entity_vocab, seed })
    }

    pub fn prepare(&self, examples: &[TaskExample], vocab: &Vocabulary) -> Result<Vec<Prepared>, TaskError> {
        examples.iter().map(|ex| prepare(ex, &self.spec, vocab, self.base_entity_vocab)).collect()
    }

    /// Head logits for one example, without dropout.
    pub fn logits(&self, p: &Prepared) -> Result<Tensor<T>, TaskError> {
        let mut tape = Tape::new(&self.params);
        let l = forward(&mut tape, &self.model, &self.spec, p, None)?;
        Ok(tape.value(l).clone())
    }

    pub fn predict(&self, data: &[Prepared]) -> Result<Vec<PredictionRecord>, TaskError> {
        data.iter().map(|p| Ok(predict(&self.spec, p, &self.logits(p)?.cast::<f64>()))).collect()
    }

    pub fn evaluate(&self, data: &[Prepared], examples: &[TaskExample]) -> Result<Scores, TaskError> {
        let preds: Vec<Prediction> = self.predict(data)?.into_iter().map(|r| r.prediction).collect();
        score(self.spec.kind, examples, &preds)
    }

    /// Mean loss over `batch` and its gradients.
    pub fn batch_loss(&self, batch: &[&Prepared], step: usize) -> Result<(f64, Gradients<T>), TaskError> {
        let mut grads = Gradients::empty(self.params.len());
        let mut total = 0.0;
        let scale = T::of(1.0 / batch.len() as f64);
        for (i, p) in batch.iter().enumerate() {
            let mut tape = Tape::new(&self.params);
            let mut dropout =
                Dropout::new(self.model.dropout, seeds::derive(self.seed, &[stream::DROPOUT, step as u64, i as u64]));
            let logits = forward(&mut tape, &self.model, &self.spec, p, Some(&mut dropout))?;
            let loss = task_loss(&mut tape, p, logits)?;
            let scaled = tape.scale(loss, scale)?;
            total += tape.value(loss).item().to_f64().unwrap_or(f64::NAN);
            grads.accumulate(tape.backward(scaled)?);
        }
        Ok((total / batch.len() as f64, grads))
    }

    /// Trains on `train`, evaluating on `dev` every `eval_interval` steps
    /// and keeping the parameters with the best dev score. Stops after
    /// `patience` evaluations without improvement.
    pub fn train(
        &mut self,
        train: &[Prepared],
        dev: &[Prepared],
        dev_examples: &[TaskExample],
        mut log: impl FnMut(&EvalRecord),
    ) -> Result<FinetuneReport, TaskError> {
        if train.is_empty() {
            return Err(TaskError::Validation("no training examples".into()));
        }
        let mut optim = OptimizerState::new(&self.params);
        let mut best: Option<(f64, usize, ParamStore<T>)> = None;
        let mut history = Vec::new();
        let mut bad = 0;
        let mut order: Vec<usize> = Vec::new();
        let mut last_loss = f64::NAN;
        let mut stopped_early = false;
        let mut steps_run = 0;
        let b = self.config.batch_size;
        for step in 0..self.config.steps {
            let mut batch = Vec::with_capacity(b);
            for k in 0..b {
                let g = step * b + k;
                let epoch = g / train.len();
                if g % train.len() == 0 || order.is_empty() {
                    order = (0..train.len()).collect();
                    rand::seq::SliceRandom::shuffle(
                        order.as_mut_slice(),
                        &mut seeds::rng(self.seed, &[stream::SHUFFLE, epoch as u64]),
                    );
                }
                batch.push(&train[order[g % train.len()]]);
            }
            let (loss, grads) = self.batch_loss(&batch, step)?;
            last_loss = loss;
            adamw_step(&mut self.params, &grads, &mut optim, &self.config.optimizer, self.config.lr(step), &|_| false)?;
            steps_run = step + 1;
            let at_eval = self.config.eval_interval > 0 && steps_run % self.config.eval_interval == 0;
            if (at_eval || steps_run == self.config.steps) && !dev.is_empty() {
                let s = primary(self.spec.kind, &self.evaluate(dev, dev_examples)?);
                let rec = EvalRecord { step: steps_run, train_loss: loss, dev_score: s };
                log(&rec);
                history.push(rec);
                if best.as_ref().is_none_or(|(bs, _, _)| s > *bs) {
                    best = Some((s, steps_run, self.params.clone()));
                    bad = 0;
                } else {
                    bad += 1;
                    if self.config.patience > 0 && bad >= self.config.patience {
                        stopped_early = true;
                        break;
                    }
                }
            }
        }
        let (best_score, best_step) = match best {
            Some((s, st, params)) => {
                self.params = params;
                (s, st)
            }
            None => (f64::NAN, steps_run),
        };
        if history.is_empty() {
            history.push(EvalRecord { step: steps_run, train_loss: last_loss, dev_score: f64::NAN });
        }
        Ok(FinetuneReport { best_step, best_score, steps_run, stopped_early, history })
    }
}
