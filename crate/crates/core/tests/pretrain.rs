use luke_core::corpus::{EntitySpecial, TrainingSequence, WordSpecial};
use luke_core::model::params::{in_group, names};
use luke_core::model::{init_encoder, init_pretraining_heads, Checkpoint, EncoderInput, ModelConfig};
use luke_core::numerics::{grad_check, GradCheckOptions, Gradients, ParamStore, Tape, Tensor};
use luke_core::pretrain::{
    adamw_step, entity_logits, entity_prediction_logits, lr_schedule, make_masking_plan, pretrain_loss,
    pretrain_loss_on_tape, AdamWConfig, LossOptions, MaskedEntity, MaskedExample, MaskedWord, MaskingConfig,
    MaskingPlan, OptimizerState, PretrainConfig, StepRecord, Trainer, WordAction,
};
use luke_core::synth::{pretraining_data, World};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn three_sigma(n: f64, p: f64) -> (f64, f64) {
    let s = 3.0 * (n * p * (1.0 - p)).sqrt();
    (n * p - s, n * p + s)
}

#[test]
fn masking_rates_within_binomial_bounds() {
    let n = 100_000;
    let v_w = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let words: Vec<usize> = (0..n).map(|_| rng.random_range(5..v_w)).collect();
    let input = EncoderInput::new(words, (0..n).map(|i| 2 + i % 40).collect(), vec![vec![0]; n]);
    let cfg = MaskingConfig::default();
    let plan = make_masking_plan(&input, &mut ChaCha8Rng::seed_from_u64(12), &cfg, v_w);

    let (lo, hi) = three_sigma(n as f64, 0.15);
    assert!(lo / n as f64 >= 0.1465 && hi / n as f64 <= 0.1535);
    for count in [plan.words.len(), plan.entities.len()] {
        assert!((lo..=hi).contains(&(count as f64)), "{count} outside [{lo}, {hi}]");
    }

    let k = plan.words.len() as f64;
    let mut counts = [0usize; 3];
    for w in &plan.words {
        assert_eq!(w.gold, input.word_ids[w.position]);
        match w.action {
            WordAction::Mask => counts[0] += 1,
            WordAction::Random(r) => {
                assert!((5..v_w).contains(&r));
                counts[1] += 1
            }
            WordAction::Keep => counts[2] += 1,
        }
    }
    for (c, p) in counts.iter().zip([0.8, 0.1, 0.1]) {
        let (lo, hi) = three_sigma(k, p);
        assert!((lo..=hi).contains(&(*c as f64)), "{c} outside [{lo}, {hi}] for share {p}");
    }
    for e in &plan.entities {
        assert_eq!(e.gold, input.entity_ids[e.index]);
    }
    let corrupted = plan.apply(&input);
    for e in &plan.entities {
        assert_eq!(corrupted.entity_ids[e.index], EntitySpecial::Mask.id());
    }
}

#[test]
fn masking_saturation_and_specials() {
    let input = EncoderInput::new(
        vec![WordSpecial::Cls.id(), 7, 8, WordSpecial::Sep.id()],
        (2..12).collect(),
        vec![vec![1]; 10],
    );
    let none = MaskingConfig { word_prob: 0.0, entity_prob: 0.0, ..Default::default() };
    assert!(make_masking_plan(&input, &mut ChaCha8Rng::seed_from_u64(0), &none, 20).is_empty());
    let all = MaskingConfig { word_prob: 1.0, entity_prob: 1.0, ..Default::default() };
    let plan = make_masking_plan(&input, &mut ChaCha8Rng::seed_from_u64(0), &all, 20);
    assert_eq!(plan.entities.len(), 10);
    assert!(plan.entities.iter().zip(2..12).all(|(e, g)| e.gold == g));
    assert_eq!(plan.words.iter().map(|w| w.position).collect::<Vec<_>>(), vec![1, 2]);
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn head_store() -> ParamStore<f64> {
    let (d, h, v_e) = (4, 3, 5);
    let fill = |n: usize, f: &dyn Fn(usize) -> f64| (0..n).map(f).collect::<Vec<f64>>();
    let mut s = ParamStore::new();
    s.insert(names::ENT_W_H, Tensor::from_f64(vec![d, d], &fill(16, &|i| ((i % 5) as f64 - 2.0) * 0.25)).unwrap())
        .unwrap();
    s.insert(names::ENT_B_H, Tensor::from_f64(vec![d], &[0.1, -0.2, 0.0, 0.3]).unwrap()).unwrap();
    s.insert(names::ENT_LN_GAIN, Tensor::from_f64(vec![d], &[1.0, 2.0, 0.5, 1.0]).unwrap()).unwrap();
    s.insert(names::ENT_LN_BIAS, Tensor::from_f64(vec![d], &[0.0, 0.1, 0.0, -0.1]).unwrap()).unwrap();
    s.insert(names::ENT_T, Tensor::from_f64(vec![h, d], &fill(12, &|i| if i % 4 == i / 4 { 1.0 } else { 0.5 })).unwrap())
        .unwrap();
    s.insert(names::B, Tensor::from_f64(vec![v_e, h], &fill(15, &|i| (i as f64 - 7.0) / 7.0)).unwrap()).unwrap();
    s.insert(names::ENT_B_O, Tensor::from_f64(vec![v_e], &[0.0, 1.0, -1.0, 0.5, 0.0]).unwrap()).unwrap();
    s
}

#[test]
fn entity_head_matches_hand_arithmetic() {
    let s = head_store();
    let get = |n: &str| s.by_name(n).unwrap().data().to_vec();
    let h_e = [0.5, -1.0, 2.0, 0.0];
    let (w, b) = (get(names::ENT_W_H), get(names::ENT_B_H));
    let z: Vec<f64> = (0..4).map(|r| gelu((0..4).map(|c| w[r * 4 + c] * h_e[c]).sum::<f64>() + b[r])).collect();
    let mu = z.iter().sum::<f64>() / 4.0;
    let var = z.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 4.0;
    let (g, beta) = (get(names::ENT_LN_GAIN), get(names::ENT_LN_BIAS));
    let m: Vec<f64> = (0..4).map(|j| (z[j] - mu) / (var + 1e-12).sqrt() * g[j] + beta[j]).collect();
    let t = get(names::ENT_T);
    let tm: Vec<f64> = (0..3).map(|r| (0..4).map(|c| t[r * 4 + c] * m[c]).sum()).collect();
    let (bm, bo) = (get(names::B), get(names::ENT_B_O));
    let expected: Vec<f64> = (0..5).map(|r| (0..3).map(|c| bm[r * 3 + c] * tm[c]).sum::<f64>() + bo[r]).collect();

    let logits = entity_prediction_logits(&s, &h_e, 1e-12).unwrap();
    for (a, e) in logits.iter().zip(&expected) {
        assert!((a - e).abs() < 1e-12, "{a} vs {e}");
    }
    let mx = logits.iter().cloned().fold(f64::MIN, f64::max);
    let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
    let total: f64 = logits.iter().map(|l| (l - mx).exp() / z).sum();
    assert!((total - 1.0).abs() < 1e-6);
}

#[test]
fn entity_head_gradients() {
    let s = head_store();
    let h = Tensor::from_f64(vec![2, 4], &[0.5, -1.0, 2.0, 0.0, 0.3, 0.3, -0.7, 1.1]).unwrap();
    let probe = Tensor::from_f64(vec![2, 5], &[1.0, -0.5, 0.25, 2.0, -1.5, 0.3, 0.7, -0.9, 0.1, 0.6]).unwrap();
    let report = grad_check(
        &s,
        |tape: &mut Tape<f64>| -> Result<_, luke_core::pretrain::PretrainError> {
            let x = tape.constant(h.clone());
            let l = entity_logits(tape, x, 1e-12)?;
            let w = tape.mul_const(l, probe.clone())?;
            Ok(tape.sum(w)?)
        },
        &GradCheckOptions { tolerance: 1e-6, samples_per_param: 20, ..Default::default() },
    )
    .unwrap();
    assert!(report.passed(), "{:?}", report.failures().collect::<Vec<_>>());
    assert!(report.get(names::B).is_some() && report.get(names::ENT_T).is_some());
}

fn tiny_store(cfg: &ModelConfig, seed: u64) -> ParamStore<f64> {
    let mut s = init_encoder::<f64>(cfg, seed).unwrap();
    init_pretraining_heads(&mut s, cfg, seed).unwrap();
    s
}

fn tiny_batch() -> Vec<MaskedExample> {
    let a = EncoderInput::new(vec![2, 5, 6, 7, 3], vec![3, 4], vec![vec![1, 2], vec![3]]);
    let b = EncoderInput::new(vec![2, 8, 9, 3], vec![5], vec![vec![2]]);
    vec![
        MaskedExample {
            input: a,
            plan: MaskingPlan {
                words: vec![
                    MaskedWord { position: 1, action: WordAction::Mask, gold: 5 },
                    MaskedWord { position: 3, action: WordAction::Random(10), gold: 7 },
                ],
                entities: vec![MaskedEntity { index: 1, gold: 4 }],
            },
        },
        MaskedExample {
            input: b,
            plan: MaskingPlan {
                words: vec![MaskedWord { position: 2, action: WordAction::Keep, gold: 9 }],
                entities: vec![MaskedEntity { index: 0, gold: 5 }],
            },
        },
    ]
}

#[test]
fn full_pretraining_loss_gradients() {
    let cfg = ModelConfig::tiny();
    let s = tiny_store(&cfg, 31);
    let batch = tiny_batch();
    let opts = LossOptions::default();
    let report = grad_check(
        &s,
        |tape: &mut Tape<f64>| -> Result<_, luke_core::pretrain::PretrainError> {
            Ok(pretrain_loss_on_tape(tape, &cfg, &batch, opts)?.expect("masked tokens present"))
        },
        &GradCheckOptions { tolerance: 1e-5, samples_per_param: 6, ..Default::default() },
    )
    .unwrap();
    assert!(report.passed(), "{:?}", report.failures().collect::<Vec<_>>());
    assert_eq!(report.params.len(), s.len());
    for group in ["word_embeddings", "entity_embeddings", "layers", "mlm_head", "entity_head"] {
        assert!(report.params.iter().any(|p| in_group(&p.name, group).unwrap()), "{group}");
    }

    // The per-sequence accumulation agrees with the single-tape loss.
    let (rep, grads) = pretrain_loss(&s, &cfg, &batch, opts, None, true).unwrap();
    let mut tape = Tape::new(&s);
    let l = pretrain_loss_on_tape(&mut tape, &cfg, &batch, opts).unwrap().unwrap();
    assert!((tape.value(l).item() - rep.loss).abs() < 1e-12);
    let whole = tape.backward(l).unwrap();
    let grads: Gradients<f64> = grads.unwrap();
    for id in s.ids() {
        let (a, b) = (whole.get(id), grads.get(id));
        match (a, b) {
            (Some(a), Some(b)) => {
                for (x, y) in a.data().iter().zip(b.data()) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
            (None, None) => {}
            (a, b) => {
                let nz = |g: Option<&Tensor<f64>>| g.is_some_and(|t| t.data().iter().any(|v| *v != 0.0));
                assert!(!nz(a) && !nz(b), "{}", s.name(id));
            }
        }
    }
}

#[test]
fn random_model_loss_is_near_uniform_entropy() {
    let cfg = ModelConfig { word_vocab_size: 200, entity_vocab_size: 50, ..ModelConfig::toy() };
    let s = tiny_store(&cfg, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut batch = Vec::new();
    let (mut nw, mut ne) = (0, 0);
    while nw < 10_000 || ne < 10_000 {
        let words: Vec<usize> = (0..60).map(|_| rng.random_range(5..cfg.word_vocab_size)).collect();
        let ents: Vec<usize> = (0..60).map(|_| rng.random_range(2..cfg.entity_vocab_size)).collect();
        let pos: Vec<Vec<usize>> = (0..60).map(|_| vec![rng.random_range(0..60)]).collect();
        let input = EncoderInput::new(words.clone(), ents.clone(), pos);
        let plan = MaskingPlan {
            words: words
                .iter()
                .enumerate()
                .map(|(position, &gold)| MaskedWord { position, action: WordAction::Mask, gold })
                .collect(),
            entities: ents.iter().enumerate().map(|(index, &gold)| MaskedEntity { index, gold }).collect(),
        };
        nw += plan.words.len();
        ne += plan.entities.len();
        batch.push(MaskedExample { input, plan });
    }
    let (rep, _) = pretrain_loss(&s, &cfg, &batch, LossOptions::default(), None, false).unwrap();
    let (lw, le) = ((cfg.word_vocab_size as f64).ln(), (cfg.entity_vocab_size as f64).ln());
    assert!((rep.mlm_loss - lw).abs() / lw < 0.05, "{} vs {lw}", rep.mlm_loss);
    assert!((rep.entity_loss - le).abs() / le < 0.05, "{} vs {le}", rep.entity_loss);
}

#[test]
fn perfect_entity_prediction_has_zero_loss() {
    let cfg = ModelConfig::tiny();
    let mut s = tiny_store(&cfg, 8);
    let gold = 4;
    let mut bo = vec![0.0; cfg.entity_vocab_size];
    bo[gold] = 1e3;
    s.set(names::ENT_B_O, Tensor::from_f64(vec![cfg.entity_vocab_size], &bo).unwrap()).unwrap();
    let batch = vec![MaskedExample {
        input: EncoderInput::new(vec![2, 5, 3], vec![gold], vec![vec![1]]),
        plan: MaskingPlan { words: vec![], entities: vec![MaskedEntity { index: 0, gold }] },
    }];
    let (rep, _) = pretrain_loss(&s, &cfg, &batch, LossOptions::default(), None, false).unwrap();
    assert!(rep.entity_loss < 1e-12 && rep.entity_loss >= 0.0);
    assert_eq!(rep.mlm_loss, 0.0);
    assert_eq!(rep.entity_correct, 1);
}

#[test]
fn degenerate_and_out_of_range_batches() {
    let cfg = ModelConfig::tiny();
    let s = tiny_store(&cfg, 9);
    let input = EncoderInput::new(vec![2, 5, 3], vec![3], vec![vec![1]]);
    let empty = vec![MaskedExample { input: input.clone(), plan: MaskingPlan::default() }];
    let (rep, _) = pretrain_loss(&s, &cfg, &empty, LossOptions::default(), None, true).unwrap();
    assert!(rep.degenerate);
    assert_eq!(rep.loss, 0.0);
    let bad = vec![MaskedExample {
        input,
        plan: MaskingPlan { words: vec![MaskedWord { position: 1, action: WordAction::Mask, gold: 999 }], entities: vec![] },
    }];
    assert!(pretrain_loss(&s, &cfg, &bad, LossOptions::default(), None, false).is_err());
}

/// Builds a plan from a full label vector: only the selected positions
/// carry their label into the plan.
fn plan_from_labels(words: &[usize], selected: &[bool], labels: &[usize]) -> MaskingPlan {
    MaskingPlan {
        words: (0..words.len())
            .filter(|&i| selected[i])
            .map(|i| MaskedWord { position: i, action: WordAction::Mask, gold: labels[i] })
            .collect(),
        entities: vec![],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn unmasked_labels_do_not_affect_loss(
        seed in 0u64..1000,
        selected in prop::collection::vec(any::<bool>(), 5),
        perturb in prop::collection::vec(5usize..12, 5),
    ) {
        prop_assume!(selected.iter().any(|&b| b));
        let cfg = ModelConfig::tiny();
        let s = tiny_store(&cfg, seed);
        let words = vec![5, 6, 7, 8, 9];
        let input = EncoderInput::new(words.clone(), vec![3], vec![vec![1, 2]]);
        let mut labels = words.clone();
        let before = plan_from_labels(&words, &selected, &labels);
        for i in 0..5 {
            if !selected[i] {
                labels[i] = perturb[i];
            }
        }
        let after = plan_from_labels(&words, &selected, &labels);
        let run = |plan: MaskingPlan| {
            let b = vec![MaskedExample { input: input.clone(), plan }];
            pretrain_loss(&s, &cfg, &b, LossOptions::default(), None, false).unwrap().0
        };
        let (x, y) = (run(before), run(after));
        prop_assert_eq!(x.loss.to_bits(), y.loss.to_bits());
        prop_assert!(x.mlm_loss >= 0.0 && x.entity_loss >= 0.0);
        prop_assert_eq!(x.loss.to_bits(), (x.mlm_loss + x.entity_loss).to_bits());
    }

    #[test]
    fn schedule_is_continuous_and_peaks(warmup in 1usize..50, extra in 1usize..200, peak in 1e-5f64..1e-2) {
        let total = warmup + extra;
        let lrs: Vec<f64> = (0..=total).map(|s| lr_schedule(s, warmup, total, peak).unwrap()).collect();
        let max = lrs.iter().cloned().fold(0.0, f64::max);
        prop_assert!((max - peak).abs() <= 1e-15 * peak.max(1.0));
        prop_assert_eq!(lrs[warmup], peak);
        prop_assert_eq!(lrs[total], 0.0);
        let step = peak / warmup.min(extra) as f64;
        for w in lrs.windows(2) {
            prop_assert!((w[1] - w[0]).abs() <= step * (1.0 + 1e-9));
        }
    }
}

#[test]
fn schedule_paper_values() {
    let total = 200_000;
    assert!((lr_schedule(1250, 2500, total, 5e-4).unwrap() - 2.5e-4).abs() < 1e-18);
    assert_eq!(lr_schedule(2500, 2500, total, 5e-4).unwrap(), 5e-4);
    assert!((lr_schedule(2500 + (total - 2500) / 2, 2500, total, 5e-4).unwrap() - 2.5e-4).abs() < 1e-15);
    assert!(lr_schedule(5, 10, 10, 1.0).is_err());
    let cfg = PretrainConfig::paper();
    assert!(cfg.problems().is_empty());
    let sched = cfg.schedule().unwrap();
    assert_eq!(sched.phase1_steps, 100_000);
    assert_eq!(sched.lr(2499), 5e-4);
    assert_eq!(sched.lr(100_000 + 2499), 1e-5);
}

#[test]
fn zero_learning_rate_is_identity() {
    let cfg = ModelConfig::tiny();
    let mut s = tiny_store(&cfg, 12);
    let before = s.clone();
    let (_, grads) = pretrain_loss(&s, &cfg, &tiny_batch(), LossOptions::default(), None, true).unwrap();
    let mut state = OptimizerState::new(&s);
    let opt = AdamWConfig { weight_decay: 0.0, ..Default::default() };
    for _ in 0..3 {
        adamw_step(&mut s, grads.as_ref().unwrap(), &mut state, &opt, 0.0, &|_| false).unwrap();
    }
    for ((_, n, a), (_, _, b)) in s.iter().zip(before.iter()) {
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()), "{n}");
    }
}

fn small_model(vocab_words: usize, vocab_entities: usize) -> ModelConfig {
    ModelConfig {
        hidden_size: 16,
        num_layers: 1,
        num_heads: 2,
        head_dim: 8,
        entity_dim: 8,
        word_vocab_size: vocab_words,
        entity_vocab_size: vocab_entities,
        max_positions: 32,
        ..ModelConfig::toy()
    }
}

fn world_data() -> (ModelConfig, Vec<TrainingSequence>) {
    let (vocab, seqs) = pretraining_data(&World::new(3, 12), 36, 24).unwrap();
    (small_model(vocab.word_count(), vocab.entity_count()), seqs)
}

fn short_run(total: usize) -> PretrainConfig {
    PretrainConfig { total_steps: total, batch_size: 4, warmup_steps: 2, log_interval: 1, ..Default::default() }
}

fn snapshot(s: &ParamStore<f32>) -> Vec<(String, Vec<u32>)> {
    s.iter().map(|(_, n, t)| (n.to_string(), t.data().iter().map(|v| v.to_bits()).collect())).collect()
}

#[test]
fn phase_one_freezes_pretrained_analog_groups() {
    let (model, data) = world_data();
    let mut t = Trainer::<f32>::new(model, short_run(20), 4).unwrap();
    assert_eq!(t.schedule().phase1_steps, 10);
    let frozen = |n: &str| ["word_embeddings", "layers"].iter().any(|g| in_group(n, g).unwrap());
    let init = snapshot(&t.params);
    for _ in 0..10 {
        t.train_step(&data).unwrap();
    }
    let mid = snapshot(&t.params);
    for ((name, a), (_, b)) in init.iter().zip(&mid) {
        if frozen(name) {
            assert_eq!(a, b, "{name} moved during phase 1");
        }
    }
    assert!(init.iter().zip(&mid).any(|((n, a), (_, b))| !frozen(n) && a != b));
    t.train_step(&data).unwrap();
    let after = snapshot(&t.params);
    for ((name, a), (_, b)) in mid.iter().zip(&after) {
        if name == names::A || name.starts_with("layers.0.attn.Q") || name.starts_with("layers.0.ffn.in") {
            assert_ne!(a, b, "{name} did not move at the phase boundary");
        }
    }
}

fn trajectory(t: &mut Trainer<f32>, data: &[TrainingSequence], until: usize) -> Vec<(usize, u64, u64, u64)> {
    let mut out = Vec::new();
    t.run(data, until, |ev| {
        if let luke_core::pretrain::TrainEvent::Log(r) = ev {
            out.push(StepRecord::trajectory_key(r));
        }
        Ok(())
    })
    .unwrap();
    out
}

#[test]
fn identical_seeds_give_identical_trajectories() {
    let (model, data) = world_data();
    let mut a = Trainer::<f32>::new(model.clone(), short_run(200), 9).unwrap();
    let mut b = Trainer::<f32>::new(model.clone(), short_run(200), 9).unwrap();
    let ta = trajectory(&mut a, &data, 200);
    assert_eq!(ta.len(), 200);
    assert_eq!(ta, trajectory(&mut b, &data, 200));
    let mut c = Trainer::<f32>::new(model, short_run(200), 10).unwrap();
    assert_ne!(ta[..20], trajectory(&mut c, &data, 20)[..]);
}

#[test]
fn resume_from_checkpoint_reproduces_training() {
    let (model, data) = world_data();
    let mut full = Trainer::<f32>::new(model.clone(), short_run(24), 2).unwrap();
    let whole = trajectory(&mut full, &data, 24);

    let mut first = Trainer::<f32>::new(model, short_run(24), 2).unwrap();
    let mut head = trajectory(&mut first, &data, 7);
    let bytes = first.to_checkpoint(Default::default()).to_bytes();
    let loaded = Checkpoint::<f32>::from_bytes(&bytes).unwrap();
    assert_eq!(loaded.to_bytes(), bytes);
    let mut resumed = Trainer::<f32>::from_checkpoint(&loaded).unwrap();
    assert_eq!(resumed.step, 7);
    head.extend(trajectory(&mut resumed, &data, 24));
    assert_eq!(head, whole);
    assert_eq!(snapshot(&resumed.params), snapshot(&full.params));
}

#[test]
fn mlm_only_disables_entity_masking() {
    let (model, data) = world_data();
    let cfg = PretrainConfig { entity_loss_enabled: false, ..short_run(10) };
    let mut t = Trainer::<f32>::new(model, cfg, 1).unwrap();
    for r in trajectory(&mut t, &data, 10) {
        assert_eq!(r.3, 0f64.to_bits());
    }
    assert!(t.make_batch(&data, 3).iter().all(|e| e.plan.entities.is_empty()));
}
