use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::corpus::TrainingSequence;
use crate::model::params::in_group;
use crate::model::{init_encoder, init_pretraining_heads, Checkpoint, EncoderInput, ModelConfig};
use crate::numerics::{ParamStore, Scalar, Tensor};
use crate::seeds::{self, stream};

use super::loss::{pretrain_loss, LossOptions, LossReport, MaskedExample};
use super::masking::{make_masking_plan, MaskingConfig};
use super::optim::{adamw_step, AdamWConfig, OptimizerState};
use super::schedule::TwoPhaseSchedule;
use super::PretrainError;

pub const CHECKPOINT_KIND: &str = "pretrain";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub total_steps: usize,
    pub batch_size: usize,
    pub warmup_steps: usize,
    pub peak_lr_phase1: f64,
    pub peak_lr_phase2: f64,
    pub phase1_fraction: f64,
    pub frozen_groups: Vec<String>,
    pub masking: MaskingConfig,
    pub optimizer: AdamWConfig,
    pub entity_loss_enabled: bool,
    pub log_interval: usize,
    /// 0 disables periodic checkpoints.
    pub checkpoint_interval: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 2000,
            batch_size: 8,
            warmup_steps: 100,
            peak_lr_phase1: 5e-3,
            peak_lr_phase2: 2e-3,
            phase1_fraction: 0.5,
            frozen_groups: vec!["word_embeddings".into(), "layers".into()],
            masking: MaskingConfig::default(),
            optimizer: AdamWConfig::default(),
            entity_loss_enabled: true,
            log_interval: 10,
            checkpoint_interval: 0,
        }
    }
}

impl PretrainConfig {
    /// The published pretraining hyper-parameters.
    pub fn paper() -> Self {
        Self {
            total_steps: 200_000,
            batch_size: 2048,
            warmup_steps: 2500,
            peak_lr_phase1: 5e-4,
            peak_lr_phase2: 1e-5,
            phase1_fraction: 0.5,
            ..Self::default()
        }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.total_steps == 0 {
            out.push("pretrain.total_steps must be positive".into());
        }
        if self.batch_size == 0 {
            out.push("pretrain.batch_size must be positive".into());
        }
        if self.log_interval == 0 {
            out.push("pretrain.log_interval must be positive".into());
        }
        for (name, lr) in [("peak_lr_phase1", self.peak_lr_phase1), ("peak_lr_phase2", self.peak_lr_phase2)] {
            if !(lr >= 0.0 && lr.is_finite()) {
                out.push(format!("pretrain.{name} ({lr}) must be a non-negative number"));
            }
        }
        for g in &self.frozen_groups {
            if let Err(e) = in_group("", g) {
                out.push(format!("pretrain.frozen_groups: {e}"));
            }
        }
        if self.total_steps > 0 {
            if let Err(e) = self.schedule() {
                out.push(format!("pretrain: {e}"));
            }
        }
        out.extend(self.masking.problems());
        out.extend(self.optimizer.problems());
        out
    }

    pub fn schedule(&self) -> Result<TwoPhaseSchedule, PretrainError> {
        TwoPhaseSchedule::new(
            self.total_steps,
            self.phase1_fraction,
            self.warmup_steps,
            self.peak_lr_phase1,
            self.peak_lr_phase2,
        )
    }
}

/// One metrics-log record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub mlm_loss: f64,
    pub entity_loss: f64,
    pub mlm_acc: f64,
    pub entity_acc: f64,
    pub wall_ms: u64,
}

impl StepRecord {
    /// Same record without the wall-clock field, for determinism checks.
    pub fn trajectory_key(&self) -> (usize, u64, u64, u64) {
        (self.step, self.lr.to_bits(), self.mlm_loss.to_bits(), self.entity_loss.to_bits())
    }
}

pub enum TrainEvent<'a, T: Scalar> {
    Log(&'a StepRecord),
    Checkpoint(&'a Trainer<T>),
}

/// Parameters, optimizer state and step counter of a pretraining run. All
/// randomness is derived from `(seed, epoch | step, index)`, so the state at
/// step k fully determines the rest of the run.
pub struct Trainer<T: Scalar> {
    pub model: ModelConfig,
    pub config: PretrainConfig,
    pub seed: u64,
    pub params: ParamStore<T>,
    pub optim: OptimizerState<T>,
    pub step: usize,
    schedule: TwoPhaseSchedule,
    started: Instant,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: ModelConfig, config: PretrainConfig, seed: u64) -> Result<Self, PretrainError> {
        model.validate()?;
        let problems = config.problems();
        if !problems.is_empty() {
            return Err(PretrainError::Config(problems.join("; ")));
        }
        let init_seed = seeds::derive(seed, &[stream::INIT]);
        let mut params = init_encoder::<T>(&model, init_seed)?;
        init_pretraining_heads(&mut params, &model, init_seed)?;
        let optim = OptimizerState::new(&params);
        let schedule = config.schedule()?;
        Ok(Self { model, config, seed, params, optim, step: 0, schedule, started: Instant::now() })
    }

    pub fn schedule(&self) -> &TwoPhaseSchedule {
        &self.schedule
    }

    /// Dataset indices consumed by the update at `step`. Sequences are
    /// visited in a fresh seeded permutation each epoch.
    pub fn batch_indices(&self, step: usize, n: usize) -> Vec<usize> {
        let b = self.config.batch_size;
        let mut out = Vec::with_capacity(b);
        let mut cached: Option<(usize, Vec<usize>)> = None;
        for k in 0..b {
            let g = step * b + k;
            let epoch = g / n;
            if cached.as_ref().map(|c| c.0) != Some(epoch) {
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut seeds::rng(self.seed, &[stream::SHUFFLE, epoch as u64]));
                cached = Some((epoch, perm));
            }
            out.push(cached.as_ref().expect("filled above").1[g % n]);
        }
        out
    }

    fn masking_for_training(&self) -> MaskingConfig {
        let mut m = self.config.masking.clone();
        if !self.config.entity_loss_enabled || !self.model.use_entity_inputs {
            m.entity_prob = 0.0;
        }
        m
    }

    /// Masked examples for the update at `step`.
    pub fn make_batch(&self, data: &[TrainingSequence], step: usize) -> Vec<MaskedExample> {
        let masking = self.masking_for_training();
        let epoch_of = |k: usize| (step * self.config.batch_size + k) / data.len();
        self.batch_indices(step, data.len())
            .into_iter()
            .enumerate()
            .map(|(k, idx)| {
                let input = EncoderInput::from_sequence(&data[idx]);
                let mut rng = seeds::rng(self.seed, &[stream::MASK, epoch_of(k) as u64, idx as u64]);
                let plan = make_masking_plan(&input, &mut rng, &masking, self.model.word_vocab_size);
                MaskedExample { input, plan }
            })
            .collect()
    }

    fn frozen_now(&self, name: &str) -> bool {
        self.schedule.in_phase1(self.step)
            && self.config.frozen_groups.iter().any(|g| in_group(name, g).unwrap_or(false))
    }

    pub fn loss_options(&self) -> LossOptions {
        LossOptions { entity_loss_enabled: self.config.entity_loss_enabled }
    }

    /// Runs one optimizer update and returns its metrics.
    pub fn train_step(&mut self, data: &[TrainingSequence]) -> Result<StepRecord, PretrainError> {
        if data.is_empty() {
            return Err(PretrainError::Validation("no training sequences".into()));
        }
        if self.step >= self.config.total_steps {
            return Err(PretrainError::Validation(format!("run already finished at step {}", self.step)));
        }
        let batch = self.make_batch(data, self.step);
        let (seed, step) = (self.seed, self.step as u64);
        let dropout_seed = move |i: usize| seeds::derive(seed, &[stream::DROPOUT, step, i as u64]);
        let (report, grads) = pretrain_loss(
            &self.params,
            &self.model,
            &batch,
            self.loss_options(),
            Some(&dropout_seed),
            true,
        )?;
        let lr = self.schedule.lr(self.step);
        let grads = grads.expect("gradients requested");
        if !report.degenerate {
            let frozen: Vec<bool> = self.params.iter().map(|(_, n, _)| self.frozen_now(n)).collect();
            let names: BTreeMap<String, bool> =
                self.params.iter().zip(&frozen).map(|((_, n, _), &f)| (n.to_string(), f)).collect();
            adamw_step(&mut self.params, &grads, &mut self.optim, &self.config.optimizer, lr, &|n| names[n])?;
        }
        self.step += 1;
        Ok(StepRecord {
            step: self.step,
            lr,
            mlm_loss: report.mlm_loss,
            entity_loss: report.entity_loss,
            mlm_acc: report.mlm_accuracy(),
            entity_acc: report.entity_accuracy(),
            wall_ms: self.started.elapsed().as_millis() as u64,
        })
    }

    /// Trains until `until` (capped at the configured total), reporting log
    /// records and checkpoint points through `sink`.
    pub fn run<F>(&mut self, data: &[TrainingSequence], until: usize, mut sink: F) -> Result<(), PretrainError>
    where
        F: FnMut(TrainEvent<'_, T>) -> Result<(), PretrainError>,
    {
        let until = until.min(self.config.total_steps);
        while self.step < until {
            let rec = self.train_step(data)?;
            if rec.step % self.config.log_interval == 0 || rec.step == until {
                sink(TrainEvent::Log(&rec))?;
            }
            let ci = self.config.checkpoint_interval;
            if ci > 0 && rec.step % ci == 0 {
                sink(TrainEvent::Checkpoint(self))?;
            }
        }
        Ok(())
    }

    /// Masked-prediction metrics with fresh masks and no dropout, averaged
    /// over `passes` maskings of every sequence.
    pub fn evaluate(&self, data: &[TrainingSequence], passes: usize, eval_seed: u64) -> Result<LossReport, PretrainError> {
        let masking = self.masking_for_training();
        let mut batch = Vec::with_capacity(data.len() * passes);
        for pass in 0..passes {
            for (idx, seq) in data.iter().enumerate() {
                let input = EncoderInput::from_sequence(seq);
                let mut rng = seeds::rng(eval_seed, &[stream::EVAL_MASK, pass as u64, idx as u64]);
                let plan = make_masking_plan(&input, &mut rng, &masking, self.model.word_vocab_size);
                batch.push(MaskedExample { input, plan });
            }
        }
        let (report, _) = pretrain_loss(&self.params, &self.model, &batch, self.loss_options(), None, false)?;
        Ok(report)
    }

    pub fn to_checkpoint(&self, extra: Map<String, Value>) -> Checkpoint<T> {
        let mut meta = extra;
        meta.insert("kind".into(), Value::from(CHECKPOINT_KIND));
        meta.insert("model".into(), serde_json::to_value(&self.model).expect("config serializes"));
        meta.insert("pretrain".into(), serde_json::to_value(&self.config).expect("config serializes"));
        meta.insert("seed".into(), Value::from(self.seed));
        meta.insert("step".into(), Value::from(self.step as u64));
        let steps: Map<String, Value> =
            self.params.iter().map(|(id, n, _)| (n.to_string(), Value::from(self.optim.steps[id.index()]))).collect();
        meta.insert("optimizer_steps".into(), Value::Object(steps));
        let mut c = Checkpoint::new(meta);
        c.add_store(&self.params, "");
        for (id, name, _) in self.params.iter() {
            c.tensors.insert(format!("optim.m.{name}"), self.optim.m[id.index()].clone());
            c.tensors.insert(format!("optim.v.{name}"), self.optim.v[id.index()].clone());
        }
        c
    }

    /// Restores a run; missing optimizer tensors start from zero.
    pub fn from_checkpoint(ckpt: &Checkpoint<T>) -> Result<Self, PretrainError> {
        let bad = |m: String| PretrainError::Checkpoint(m);
        let meta = &ckpt.metadata;
        let field = |k: &str| meta.get(k).cloned().ok_or_else(|| bad(format!("metadata lacks `{k}`")));
        let model: ModelConfig = serde_json::from_value(field("model")?).map_err(|e| bad(format!("model: {e}")))?;
        let config: PretrainConfig =
            serde_json::from_value(field("pretrain")?).map_err(|e| bad(format!("pretrain: {e}")))?;
        let seed = field("seed")?.as_u64().ok_or_else(|| bad("seed must be an integer".into()))?;
        let step = field("step")?.as_u64().ok_or_else(|| bad("step must be an integer".into()))? as usize;
        let mut t = Self::new(model, config, seed)?;
        let opt_steps = meta.get("optimizer_steps").and_then(Value::as_object).cloned().unwrap_or_default();
        let ids: Vec<_> = t.params.ids().collect();
        for id in ids {
            let name = t.params.name(id).to_string();
            let saved = ckpt.tensors.get(&name).ok_or_else(|| bad(format!("missing parameter `{name}`")))?;
            if saved.shape() != t.params.get(id).shape() {
                return Err(bad(format!("`{name}` has shape {:?}, expected {:?}", saved.shape(), t.params.get(id).shape())));
            }
            *t.params.get_mut(id) = saved.clone();
            let i = id.index();
            let take = |kind: &str| -> Result<Tensor<T>, PretrainError> {
                match ckpt.tensors.get(&format!("optim.{kind}.{name}")) {
                    Some(m) if m.shape() == saved.shape() => Ok(m.clone()),
                    Some(_) => Err(bad(format!("optimizer moment for `{name}` has the wrong shape"))),
                    None => Ok(Tensor::zeros(saved.shape().to_vec())),
                }
            };
            t.optim.m[i] = take("m")?;
            t.optim.v[i] = take("v")?;
            t.optim.steps[i] = opt_steps.get(&name).and_then(Value::as_u64).unwrap_or(0);
        }
        t.step = step;
        Ok(t)
    }
}
