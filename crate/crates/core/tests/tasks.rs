use std::collections::BTreeSet;

use luke_core::corpus::Vocabulary;
use luke_core::model::{init_encoder, init_pretraining_heads, AttentionMode, ModelConfig};
use luke_core::numerics::{grad_check, GradCheckOptions, ParamStore, Tape, Tensor};
use luke_core::synth::{pretraining_data, World};
use luke_core::tasks::synth::RELATIONS;
use luke_core::tasks::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Fixture {
    world: World,
    vocab: Vocabulary,
    model: ModelConfig,
    store: ParamStore<f64>,
}

fn fixture() -> Fixture {
    let world = World::new(5, 8);
    let (vocab, _) = pretraining_data(&world, 40, 32).unwrap();
    let model = ModelConfig {
        word_vocab_size: vocab.word_count(),
        entity_vocab_size: vocab.entity_count(),
        max_positions: 48,
        attention_mode: AttentionMode::Original,
        ..ModelConfig::tiny()
    };
    let mut store = init_encoder::<f64>(&model, 3).unwrap();
    init_pretraining_heads(&mut store, &model, 3).unwrap();
    Fixture { world, vocab, model, store }
}

fn config(mode: AttentionMode) -> FinetuneConfig {
    FinetuneConfig { attention_mode: mode, dropout: 0.0, ..Default::default() }
}

fn tuner(f: &Fixture, kind: TaskKind, examples: &[TaskExample], mode: AttentionMode) -> FineTuner<f64> {
    let spec = TaskSpec::from_examples(kind, examples).unwrap();
    FineTuner::new(&f.store, &f.model, spec, config(mode), 9).unwrap()
}

fn zero_head(t: &mut FineTuner<f64>) {
    let names: Vec<String> = t.params.iter().map(|(_, n, _)| n.to_string()).filter(|n| n.starts_with("task.")).collect();
    for n in names {
        let shape = t.params.by_name(&n).unwrap().shape().to_vec();
        t.params.set(&n, Tensor::zeros(shape)).unwrap();
    }
}

fn loss_of(t: &FineTuner<f64>, p: &Prepared) -> f64 {
    let mut tape = Tape::new(&t.params);
    let l = forward(&mut tape, &t.model, &t.spec, p, None).unwrap();
    let loss = task_loss(&mut tape, p, l).unwrap();
    tape.value(loss).item()
}

#[test]
fn zero_classifiers_give_uniform_losses() {
    let f = fixture();
    for kind in TaskKind::ALL {
        let data = synth_generate(&f.world, kind, 1, 6);
        let mut t = tuner(&f, kind, &data, AttentionMode::EntityAware);
        zero_head(&mut t);
        for (ex, p) in data.iter().zip(t.prepare(&data, &f.vocab).unwrap()) {
            let expected = match kind {
                TaskKind::Typing | TaskKind::Cloze => 2f64.ln(),
                TaskKind::Relation => (RELATIONS.len() as f64).ln(),
                TaskKind::Ner => (t.spec.labels.len() as f64 + 1.0).ln(),
                TaskKind::Extractive => 2.0 * (p.word_ids.len() as f64).ln(),
            };
            let got = loss_of(&t, &p);
            assert!((got - expected).abs() < 1e-12, "{kind} {}: {got} vs {expected}", ex.id());
        }
    }
}

#[test]
fn head_arithmetic_matches_hand_computation() {
    let f = fixture();
    let data = synth_generate(&f.world, TaskKind::Typing, 2, 1);
    let mut t = tuner(&f, TaskKind::Typing, &data, AttentionMode::EntityAware);
    let p = &t.prepare(&data, &f.vocab).unwrap()[0];
    let d = t.model.hidden_size;
    let k = t.spec.labels.len();
    let w: Vec<f64> = (0..k * d).map(|i| (i as f64 * 0.37).sin()).collect();
    let b: Vec<f64> = (0..k).map(|i| 0.1 * i as f64 - 0.2).collect();
    t.params.set(head_names::TYPING_W, Tensor::new(vec![k, d], w.clone()).unwrap()).unwrap();
    t.params.set(head_names::TYPING_B, Tensor::new(vec![k], b.clone()).unwrap()).unwrap();

    let mut tape = Tape::new(&t.params);
    let input = luke_core::model::EncoderInput::new(p.word_ids.clone(), p.entity_ids.clone(), p.entity_positions.clone());
    let enc = luke_core::model::encode_on_tape(&mut tape, &t.model, &input, None).unwrap();
    let h = tape.value(enc.entities.unwrap()).row(0).to_vec();
    let logits = t.logits(p).unwrap();
    let Gold::Types(gold) = &p.gold else { panic!() };
    let mut bce = 0.0;
    for j in 0..k {
        let z: f64 = b[j] + (0..d).map(|i| w[j * d + i] * h[i]).sum::<f64>();
        assert!((logits.data()[j] - z).abs() < 1e-12);
        let y = if gold[j] { 1.0 } else { 0.0 };
        bce += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
    }
    assert!((loss_of(&t, p) - bce / k as f64).abs() < 1e-12);
}

#[test]
fn relation_head_is_order_sensitive() {
    let f = fixture();
    let data = synth_generate(&f.world, TaskKind::Relation, 4, 10);
    let t = tuner(&f, TaskKind::Relation, &data, AttentionMode::EntityAware);
    assert_eq!(t.model.entity_vocab_size, f.model.entity_vocab_size + 2);
    let TaskExample::Relation(x) = &data[0] else { panic!() };
    let mut swapped = x.clone();
    std::mem::swap(&mut swapped.head, &mut swapped.tail);
    let both = [TaskExample::Relation(x.clone()), TaskExample::Relation(swapped)];
    let p = t.prepare(&both, &f.vocab).unwrap();
    let (a, b) = (t.logits(&p[0]).unwrap(), t.logits(&p[1]).unwrap());
    let diff = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(diff > 1e-6, "swapping head and tail left logits unchanged");
}

#[test]
fn span_enumeration_count() {
    let (n, l) = (20usize, 16usize);
    assert_eq!(ner_enumerate(n, l).len(), n * l - l * (l - 1) / 2);
    let spans = ner_enumerate(n, l);
    assert!(spans.iter().all(|s| !s.is_empty() && s.len() <= l && s.end <= n));
    assert_eq!(spans.iter().collect::<BTreeSet<_>>().len(), spans.len());
}

/// Repeatedly takes the best remaining candidate that overlaps nothing chosen.
fn greedy_oracle(preds: &[SpanPrediction]) -> Vec<SpanPrediction> {
    let mut chosen: Vec<SpanPrediction> = Vec::new();
    let mut left: Vec<SpanPrediction> = preds.iter().copied().filter(|p| p.label > 0).collect();
    loop {
        left.retain(|p| chosen.iter().all(|c| p.span.end <= c.span.start || c.span.end <= p.span.start));
        let mut best: Option<SpanPrediction> = None;
        for p in &left {
            let better = match best {
                None => true,
                Some(b) => {
                    p.logit > b.logit
                        || (p.logit == b.logit
                            && (p.span.start < b.span.start
                                || (p.span.start == b.span.start && p.span.len() < b.span.len())))
                }
            };
            if better {
                best = Some(*p);
            }
        }
        match best {
            Some(b) => chosen.push(b),
            None => break,
        }
    }
    chosen.sort_by_key(|p| p.span.start);
    chosen
}

#[test]
fn ner_decode_matches_greedy_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..1000 {
        let n = rng.random_range(1..14);
        let preds: Vec<SpanPrediction> = ner_enumerate(n, rng.random_range(1..6))
            .into_iter()
            .map(|span| SpanPrediction { span, label: rng.random_range(0..4), logit: rng.random_range(-3..4) as f64 })
            .collect();
        assert_eq!(ner_decode(&preds), greedy_oracle(&preds));
    }
}

#[test]
fn extractive_decode_matches_exhaustive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..500 {
        let m = rng.random_range(1..20);
        let start: Vec<f64> = (0..m).map(|_| rng.random_range(-2..3) as f64).collect();
        let end: Vec<f64> = (0..m).map(|_| rng.random_range(-2..3) as f64).collect();
        let lo = rng.random_range(0..m);
        let hi = rng.random_range(lo..=m);
        let max_len = rng.random_range(1..8);
        let pairs: Vec<(usize, usize)> =
            (lo..hi).flat_map(|s| (lo..hi).map(move |e| (s, e))).filter(|&(s, e)| s <= e && e - s < max_len).collect();
        let best = pairs.iter().map(|&(s, e)| start[s] + end[e]).fold(f64::NEG_INFINITY, f64::max);
        let oracle = pairs.iter().copied().filter(|&(s, e)| start[s] + end[e] == best).min();
        assert_eq!(extractive_decode(&start, &end, lo..hi, max_len), oracle);
    }
}

#[test]
fn rules_score_perfectly_on_their_own_data() {
    let world = World::standard();
    for kind in TaskKind::ALL {
        let data = synth_generate(&world, kind, 3, 200);
        for ex in &data {
            ex.validate().unwrap();
        }
        let preds: Vec<Prediction> = data.iter().map(|ex| rule_predict(&world, ex)).collect();
        let s = score(kind, &data, &preds).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0), "{kind}");
        assert_eq!(primary(kind, &s), 1.0);
    }
}

#[test]
fn synthetic_data_is_deterministic() {
    let world = World::standard();
    for kind in TaskKind::ALL {
        let a = synth_generate(&world, kind, 8, 30);
        assert_eq!(a, synth_generate(&world, kind, 8, 30));
        assert_eq!(&a[..10], &synth_generate(&world, kind, 8, 10)[..]);
        assert_ne!(a, synth_generate(&world, kind, 9, 30));
        assert!(synth_generate(&world, kind, 8, 0).is_empty());
        let text = to_jsonl(&a);
        let back: Vec<TaskExample> = text.lines().map(|l| parse_task_line(l).unwrap()).collect();
        assert_eq!(a, back);
    }
    let labels: BTreeSet<String> = synth_generate(&world, TaskKind::Relation, 8, 300)
        .into_iter()
        .map(|ex| match ex {
            TaskExample::Relation(r) => r.label,
            _ => unreachable!(),
        })
        .collect();
    assert_eq!(labels.len(), RELATIONS.len());
}

#[test]
fn entity_aware_tuning_starts_from_original_logits() {
    let f = fixture();
    for kind in TaskKind::ALL {
        let data = synth_generate(&f.world, kind, 5, 4);
        let a = tuner(&f, kind, &data, AttentionMode::EntityAware);
        let o = tuner(&f, kind, &data, AttentionMode::Original);
        for p in a.prepare(&data, &f.vocab).unwrap() {
            assert!(a.logits(&p).unwrap().bit_eq(&o.logits(&p).unwrap()), "{kind} {}", p.id);
        }
    }
}

#[test]
fn task_heads_pass_gradient_check() {
    let f = fixture();
    for kind in TaskKind::ALL {
        let data = synth_generate(&f.world, kind, 6, 2);
        let mut t = tuner(&f, kind, &data, AttentionMode::EntityAware);
        if kind == TaskKind::Ner {
            t.spec.max_entities_per_pass = 7;
        }
        let prepared = t.prepare(&data, &f.vocab).unwrap();
        let (cfg, spec) = (t.model.clone(), t.spec.clone());
        let report = grad_check(
            &t.params,
            |tape: &mut Tape<f64>| -> Result<_, TaskError> {
                let mut total = None;
                for p in &prepared {
                    let l = forward(tape, &cfg, &spec, p, None)?;
                    let l = task_loss(tape, p, l)?;
                    total = Some(match total {
                        Some(s) => tape.add(s, l)?,
                        None => l,
                    });
                }
                Ok(total.unwrap())
            },
            &GradCheckOptions {
                tolerance: 1e-5,
                samples_per_param: 4,
                only: Some(t.params.iter().map(|(_, n, _)| n.to_string()).filter(|n| n.starts_with("task.") || n.ends_with(".B") || n.contains("Q_e2e")).collect()),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(report.passed(), "{kind}: {:?}", report.failures().collect::<Vec<_>>());
        assert!(report.params.iter().any(|p| p.name.starts_with("task.")), "{kind}");
    }
}

#[test]
fn word_only_heads_run_without_entity_inputs() {
    let mut f = fixture();
    f.model.use_entity_inputs = false;
    for kind in TaskKind::ALL {
        let data = synth_generate(&f.world, kind, 7, 3);
        let t = tuner(&f, kind, &data, AttentionMode::Original);
        assert_eq!(t.model.entity_vocab_size, f.model.entity_vocab_size);
        for p in t.prepare(&data, &f.vocab).unwrap() {
            assert!(t.logits(&p).unwrap().data().iter().all(|v| v.is_finite()));
        }
    }
}

#[test]
fn cloze_prediction_ignores_candidate_order() {
    let f = fixture();
    let data = synth_generate(&f.world, TaskKind::Cloze, 11, 5);
    let t = tuner(&f, TaskKind::Cloze, &data, AttentionMode::EntityAware);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for ex in &data {
        let TaskExample::Cloze(x) = ex else { panic!() };
        let mut shuffled = x.clone();
        shuffled.candidates.shuffle(&mut rng);
        let both = [ex.clone(), TaskExample::Cloze(shuffled.clone())];
        let p = t.prepare(&both, &f.vocab).unwrap();
        let r = t.predict(&p).unwrap();
        assert_eq!(r[0].prediction, r[1].prediction);
        for (i, c) in shuffled.candidates.iter().enumerate() {
            let j = x.candidates.iter().position(|o| o == c).unwrap();
            assert!((r[1].scores[i] - r[0].scores[j]).abs() < 1e-9);
        }
    }
}

#[test]
fn fine_tuning_reduces_loss_and_keeps_best_dev_params() {
    let f = fixture();
    let train = synth_generate(&f.world, TaskKind::Typing, 1, 16);
    let dev = synth_generate(&f.world, TaskKind::Typing, 2, 8);
    let spec = TaskSpec::from_examples(TaskKind::Typing, &train).unwrap();
    let cfg = FinetuneConfig { steps: 60, batch_size: 4, peak_lr: 1e-2, eval_interval: 20, patience: 0, dropout: 0.0, ..Default::default() };
    let mut t = FineTuner::new(&f.store, &f.model, spec, cfg, 1).unwrap();
    let tp = t.prepare(&train, &f.vocab).unwrap();
    let dp = t.prepare(&dev, &f.vocab).unwrap();
    let before: f64 = tp.iter().map(|p| loss_of(&t, p)).sum();
    let report = t.train(&tp, &dp, &dev, |_| {}).unwrap();
    let after: f64 = tp.iter().map(|p| loss_of(&t, p)).sum();
    assert!(after < before, "{after} >= {before}");
    assert_eq!(report.history.len(), 3);
    let best = report.history.iter().map(|r| r.dev_score).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(report.best_score, best);
    assert_eq!(primary(TaskKind::Typing, &t.evaluate(&dp, &dev).unwrap()), best);
}

#[test]
fn invalid_finetune_config_lists_every_problem() {
    let cfg = FinetuneConfig { steps: 0, batch_size: 0, warmup_ratio: 1.5, ..Default::default() };
    let problems = cfg.problems();
    assert!(problems.len() >= 3, "{problems:?}");
}

#[test]
fn prediction_count_mismatch_is_rejected() {
    let world = World::standard();
    let data = synth_generate(&world, TaskKind::Relation, 1, 3);
    assert!(score(TaskKind::Relation, &data, &[]).is_err());
    let wrong = vec![Prediction::Text("x".into()); 3];
    assert!(score(TaskKind::Relation, &data, &wrong).is_err());
}

proptest! {
    #[test]
    fn set_metrics_ignore_example_order(
        sets in prop::collection::vec(
            (prop::collection::btree_set(0u8..6, 0..4), prop::collection::btree_set(0u8..6, 0..4)), 1..12),
        seed in any::<u64>(),
    ) {
        let (p, g): (Vec<_>, Vec<_>) = sets.iter().cloned().unzip();
        let base = set_prf(&p, &g);
        let mut idx: Vec<usize> = (0..sets.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let p2: Vec<_> = idx.iter().map(|&i| p[i].clone()).collect();
        let g2: Vec<_> = idx.iter().map(|&i| g[i].clone()).collect();
        prop_assert_eq!(base, set_prf(&p2, &g2));
        prop_assert!((0.0..=1.0).contains(&base.f1));
    }

    #[test]
    fn token_f1_is_symmetric_and_bounded(a in "[a-c ]{0,12}", b in "[a-c ]{0,12}") {
        let (x, y) = (token_f1(&a, &b), token_f1(&b, &a));
        prop_assert!((x - y).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&x));
        if exact_match(&a, &b) {
            prop_assert_eq!(x, 1.0);
        }
    }

    #[test]
    fn decoded_spans_never_overlap(logits in prop::collection::vec((0usize..3, -5i32..5), 1..60)) {
        let spans = ner_enumerate(12, 5);
        let preds: Vec<SpanPrediction> = spans.iter().zip(&logits)
            .map(|(s, &(label, l))| SpanPrediction { span: *s, label, logit: l as f64 }).collect();
        let out = ner_decode(&preds);
        for (i, a) in out.iter().enumerate() {
            prop_assert!(a.label > 0);
            for b in &out[i + 1..] {
                prop_assert!(!a.span.overlaps(&b.span));
                prop_assert!(a.span.start < b.span.start);
            }
        }
    }
}
