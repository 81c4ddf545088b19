//! The full-model gradient-check suite: every encoder parameter, both
//! pretraining heads and all five task heads, at 64-bit precision.

use std::collections::{BTreeMap, BTreeSet};

use luke_core::model::{init_encoder, init_pretraining_heads, AttentionMode, EncoderInput, ModelConfig};
use luke_core::numerics::{grad_check, BackwardFault, GradCheckOptions, ParamStore, Tape};
use luke_core::pretrain::{
    make_masking_plan, pretrain_loss_on_tape, LossOptions, MaskedEntity, MaskedExample, MaskingConfig,
};
use luke_core::seeds;
use luke_core::synth::{pretraining_data, World};
use luke_core::tasks::{forward, synth_generate, task_loss, FineTuner, FinetuneConfig, TaskExample, TaskKind, TaskSpec};
use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

/// Reporting group of a parameter name: the model symbol for embeddings
/// and attention matrices, otherwise the block it belongs to.
pub fn report_group(name: &str) -> String {
    if let Some(task) = name.strip_prefix("task.") {
        let kind = task.split('.').next().unwrap_or(task);
        return format!("{kind}_head");
    }
    if name.starts_with("heads.mlm.") {
        return "mlm_head".into();
    }
    if name.starts_with("heads.entity.") {
        return "entity_head".into();
    }
    if name.contains(".ln.") {
        return "layer_norm".into();
    }
    if let Some(leaf) = name.strip_prefix("embeddings.") {
        return leaf.into();
    }
    let leaf = name.splitn(3, '.').nth(2).unwrap_or(name);
    match leaf {
        "attn.Q" => "Q",
        "attn.K" => "K",
        "attn.V" => "V",
        "attn.Q_w2e" => "Q_w2e",
        "attn.Q_e2w" => "Q_e2w",
        "attn.Q_e2e" => "Q_e2e",
        l if l.starts_with("attn.out.") => "attention_output",
        l if l.starts_with("ffn.") => "FFN",
        _ => leaf,
    }
    .to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupReport {
    pub group: String,
    pub params: usize,
    pub worst_rel_err: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeReport {
    pub mode: AttentionMode,
    pub groups: Vec<GroupReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub tolerance: f64,
    pub modes: Vec<ModeReport>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.modes.iter().all(|m| m.groups.iter().all(|g| g.passed))
    }

    pub fn worst(&self) -> f64 {
        self.modes.iter().flat_map(|m| &m.groups).map(|g| g.worst_rel_err).fold(0.0, f64::max)
    }

    pub fn failing_groups(&self) -> Vec<String> {
        let set: BTreeSet<&str> =
            self.modes.iter().flat_map(|m| &m.groups).filter(|g| !g.passed).map(|g| g.group.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for m in &self.modes {
            s.push_str(&format!("mode {}\n", m.mode));
            for g in &m.groups {
                let status = if g.passed { "ok" } else { "FAIL" };
                s.push_str(&format!("  {:<18} {:>3} params  worst {:.3e}  {status}\n", g.group, g.params, g.worst_rel_err));
            }
        }
        s.push_str(&format!("worst relative error {:.3e} (tolerance {:.0e})\n", self.worst(), self.tolerance));
        s
    }
}

fn merge(into: &mut BTreeMap<String, (BTreeSet<String>, f64)>, report: &luke_core::numerics::GradCheckReport) {
    for p in &report.params {
        let e = into.entry(report_group(&p.name)).or_default();
        e.0.insert(p.name.clone());
        e.1 = e.1.max(p.worst_rel_err);
    }
}

fn resolve_fault(store: &ParamStore<f64>, param: &str) -> Option<BackwardFault> {
    store
        .iter()
        .map(|(_, n, _)| n)
        .find(|n| *n == param || n.ends_with(&format!(".{param}")))
        .map(|n| BackwardFault::FlipSign { param: n.to_string() })
}

/// Runs the suite in `modes`. `flip` negates the backward gradient of the
/// first parameter whose name is or ends with it.
pub fn run_suite(cfg: &RunConfig, modes: &[AttentionMode], flip: Option<&str>) -> Result<SuiteReport, CliError> {
    let gc = &cfg.gradcheck;
    let world = World::new(cfg.seed.wrapping_add(3), 6);
    let (vocab, seqs) = pretraining_data(&world, 4, 16)?;
    let mut report = SuiteReport { tolerance: gc.tolerance, modes: Vec::new() };
    let mut resolved = false;
    for &mode in modes {
        let task_data: Vec<_> = TaskKind::ALL.iter().map(|&k| (k, synth_generate(&world, k, cfg.seed, 1))).collect();
        let longest = task_data
            .iter()
            .flat_map(|(_, d)| d)
            .map(|ex| match ex {
                TaskExample::Cloze(c) => c.question.len() + c.passage.len() + 4,
                TaskExample::Extractive(c) => c.question.len() + c.passage.len() + 4,
                _ => 20,
            })
            .max()
            .unwrap_or(20);
        let model = ModelConfig {
            word_vocab_size: vocab.word_count(),
            entity_vocab_size: vocab.entity_count(),
            attention_mode: mode,
            dropout: 0.0,
            max_positions: gc.model.max_positions.max(longest),
            ..gc.model.clone()
        };
        let seed = seeds::derive(cfg.seed, &[0x4743]);
        let mut store = init_encoder::<f64>(&model, seed)?;
        init_pretraining_heads(&mut store, &model, seed)?;
        let fault = flip.and_then(|p| resolve_fault(&store, p));
        resolved |= fault.is_some();
        let opts = GradCheckOptions {
            step: gc.step,
            tolerance: gc.tolerance,
            samples_per_param: gc.samples_per_param,
            seed: cfg.seed,
            only: None,
            fault: fault.clone(),
        };
        let mut groups = BTreeMap::new();

        let masking = MaskingConfig { word_prob: 0.3, entity_prob: 0.5, word_split: true };
        let batch: Vec<MaskedExample> = seqs
            .iter()
            .take(2)
            .enumerate()
            .map(|(i, s)| {
                let input = EncoderInput::from_sequence(s);
                let mut rng = seeds::rng(cfg.seed, &[0x4743, i as u64]);
                let mut plan = make_masking_plan(&input, &mut rng, &masking, model.word_vocab_size);
                if plan.entities.is_empty() && !input.entity_ids.is_empty() {
                    plan.entities.push(MaskedEntity { index: 0, gold: input.entity_ids[0] });
                }
                MaskedExample { input, plan }
            })
            .collect();
        let pre = grad_check(
            &store,
            |tape: &mut Tape<f64>| -> Result<_, CliError> {
                pretrain_loss_on_tape(tape, &model, &batch, LossOptions::default())?
                    .ok_or_else(|| CliError::Runtime("check batch has no masked tokens".into()))
            },
            &opts,
        )?;
        merge(&mut groups, &pre);

        for (kind, data) in &task_data {
            let spec = TaskSpec::from_examples(*kind, data)?;
            let ft = FinetuneConfig { attention_mode: mode, dropout: 0.0, ..Default::default() };
            let tuner = FineTuner::new(&store, &model, spec, ft, cfg.seed)?;
            let prepared = tuner.prepare(data, &vocab)?;
            let only: Vec<String> = tuner
                .params
                .iter()
                .map(|(_, n, _)| n.to_string())
                .filter(|n| n.starts_with("task.") || fault.as_ref().is_some_and(|f| matches!(f, BackwardFault::FlipSign { param } if param == n)))
                .collect();
            let r = grad_check(
                &tuner.params,
                |tape: &mut Tape<f64>| -> Result<_, CliError> {
                    let mut total = None;
                    for p in &prepared {
                        let logits = forward(tape, &tuner.model, &tuner.spec, p, None)?;
                        let l = task_loss(tape, p, logits)?;
                        total = Some(match total {
                            Some(t) => tape.add(t, l)?,
                            None => l,
                        });
                    }
                    total.ok_or_else(|| CliError::Runtime("empty check set".into()))
                },
                &GradCheckOptions { only: Some(only), ..opts.clone() },
            )?;
            merge(&mut groups, &r);
        }
        report.modes.push(ModeReport {
            mode,
            groups: groups
                .into_iter()
                .map(|(group, (params, worst))| GroupReport { passed: worst < gc.tolerance, group, params: params.len(), worst_rel_err: worst })
                .collect(),
        });
    }
    if let (Some(p), false) = (flip, resolved) {
        return Err(CliError::Validation(format!("no parameter named `{p}` in the checked modes")));
    }
    Ok(report)
}
