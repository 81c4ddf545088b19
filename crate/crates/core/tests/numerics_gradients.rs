//! Every differentiable primitive against central finite differences at
//! 64-bit with h = 1e-5 and tolerance 1e-6.

use std::cell::Cell;

use luke_core::numerics::{
    grad_check, BackwardFault, GradCheckOptions, NumericsError, OpKind, ParamStore, Tape, Tensor, Var,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

/// Contract an arbitrary output against fixed random weights so that every
/// output element influences the scalar differently.
fn weighted_sum(tape: &mut Tape<'_, f64>, y: Var, seed: u64) -> Result<Var, NumericsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.shape(y).to_vec();
    let w = random(&mut rng, &shape);
    let z = tape.mul_const(y, w)?;
    tape.sum(z)
}

fn opts() -> GradCheckOptions {
    GradCheckOptions { step: 1e-5, tolerance: 1e-6, samples_per_param: 64, ..Default::default() }
}

fn assert_pass(store: &ParamStore<f64>, f: impl Fn(&mut Tape<'_, f64>) -> Result<Var, NumericsError>) {
    let report = grad_check(store, f, &opts()).unwrap();
    assert!(report.passed(), "{report:#?}");
}

fn store_with(seed: u64, shapes: &[(&str, &[usize])]) -> ParamStore<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    for (name, shape) in shapes {
        s.insert(*name, random(&mut rng, shape)).unwrap();
    }
    s
}

#[test]
fn matmul_gradient_of_sum() {
    let s = store_with(1, &[("a", &[3, 4]), ("b", &[4, 2])]);
    assert_pass(&s, |t| {
        let (a, b) = (t.param_named("a")?, t.param_named("b")?);
        let y = t.matmul(a, b)?;
        t.sum(y)
    });
}

#[test]
fn matmul_nt_gradient() {
    let s = store_with(2, &[("a", &[3, 4]), ("b", &[5, 4])]);
    assert_pass(&s, |t| {
        let (a, b) = (t.param_named("a")?, t.param_named("b")?);
        let y = t.matmul_nt(a, b)?;
        weighted_sum(t, y, 7)
    });
}

#[test]
fn add_and_bias_gradient() {
    let s = store_with(3, &[("a", &[3, 4]), ("b", &[3, 4]), ("bias", &[4])]);
    assert_pass(&s, |t| {
        let (a, b, c) = (t.param_named("a")?, t.param_named("b")?, t.param_named("bias")?);
        let y = t.add(a, b)?;
        let y = t.add_row(y, c)?;
        let y = t.scale(y, 0.7)?;
        weighted_sum(t, y, 8)
    });
}

#[test]
fn softmax_gradient_with_mask() {
    let s = store_with(4, &[("x", &[3, 5])]);
    let keep = [true, false, true, true, true];
    assert_pass(&s, |t| {
        let x = t.param_named("x")?;
        let y = t.softmax_rows(x, Some(&keep))?;
        weighted_sum(t, y, 9)
    });
}

#[test]
fn gelu_gradient_at_named_points() {
    let mut s = ParamStore::new();
    s.insert("x", Tensor::vector(vec![-2.0, -0.5, 0.3, 2.0])).unwrap();
    assert_pass(&s, |t| {
        let x = t.param_named("x")?;
        let y = t.gelu(x)?;
        t.sum(y)
    });
}

#[test]
fn layer_norm_gradient_all_inputs() {
    let s = store_with(5, &[("x", &[3, 6]), ("g", &[6]), ("b", &[6])]);
    assert_pass(&s, |t| {
        let (x, g, b) = (t.param_named("x")?, t.param_named("g")?, t.param_named("b")?);
        let y = t.layer_norm(x, g, b, 1e-5)?;
        weighted_sum(t, y, 10)
    });
}

#[test]
fn gather_and_segment_mean_gradient() {
    let s = store_with(6, &[("table", &[6, 3])]);
    assert_pass(&s, |t| {
        let table = t.param_named("table")?;
        let g = t.gather_rows(table, &[4, 1, 4, 0])?;
        let m = t.segment_mean(table, &[vec![2, 3], vec![5], vec![0, 1, 2]])?;
        let y = t.concat_rows(&[g, m])?;
        weighted_sum(t, y, 11)
    });
}

#[test]
fn concat_slice_select_gradient() {
    let s = store_with(7, &[("a", &[2, 3]), ("b", &[2, 2]), ("c", &[2, 5])]);
    assert_pass(&s, |t| {
        let (a, b, c) = (t.param_named("a")?, t.param_named("b")?, t.param_named("c")?);
        let ab = t.concat_cols(&[a, b])?;
        let chosen = t.select(&[ab, c], vec![0, 1, 1, 0, 1, 1, 0, 0, 0, 1])?;
        let head = t.slice_cols(chosen, 1, 3)?;
        let row = t.slice_rows(chosen, 1, 1)?;
        let hs = weighted_sum(t, head, 12)?;
        let rs = weighted_sum(t, row, 13)?;
        t.add(hs, rs)
    });
}

#[test]
fn cross_entropy_and_bce_gradient() {
    let s = store_with(8, &[("logits", &[4, 5]), ("bin", &[2, 3])]);
    assert_pass(&s, |t| {
        let l = t.param_named("logits")?;
        let ce = t.cross_entropy_sum(l, &[0, 4, 2, 2])?;
        let b = t.param_named("bin")?;
        let bce = t.bce_with_logits_sum(b, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0])?;
        t.add(ce, bce)
    });
}

#[test]
fn linear_function_agrees_to_roundoff() {
    let s = store_with(9, &[("w", &[3, 4])]);
    let x = Tensor::from_f64(vec![4, 1], &[0.5, -1.0, 2.0, 0.25]).unwrap();
    let report = grad_check(
        &s,
        |t: &mut Tape<'_, f64>| -> Result<Var, NumericsError> {
            let w = t.param_named("w")?;
            let xv = t.constant(x.clone());
            let y = t.matmul(w, xv)?;
            t.sum(y)
        },
        &opts(),
    )
    .unwrap();
    assert!(report.worst() < 1e-9, "worst {}", report.worst());
}

#[test]
fn corrupted_rule_is_caught_and_named() {
    let s = store_with(10, &[("w", &[4, 3]), ("v", &[2, 4])]);
    let mut o = opts();
    o.fault = Some(BackwardFault::ScaleRule { op: OpKind::Gelu, factor: 0.5 });
    let report = grad_check(
        &s,
        |t: &mut Tape<'_, f64>| -> Result<Var, NumericsError> {
            let (w, v) = (t.param_named("w")?, t.param_named("v")?);
            let h = t.matmul(v, w)?;
            let h = t.gelu(h)?;
            weighted_sum(t, h, 3)
        },
        &o,
    )
    .unwrap();
    assert!(!report.passed());
    let failed: Vec<_> = report.failures().map(|p| p.name.as_str()).collect();
    assert!(failed.contains(&"w") && failed.contains(&"v"), "{failed:?}");
}

#[test]
fn sign_flip_names_only_that_parameter() {
    let s = store_with(11, &[("w", &[4, 3]), ("v", &[2, 4])]);
    let mut o = opts();
    o.fault = Some(BackwardFault::FlipSign { param: "v".into() });
    let report = grad_check(
        &s,
        |t: &mut Tape<'_, f64>| -> Result<Var, NumericsError> {
            let (w, v) = (t.param_named("w")?, t.param_named("v")?);
            let h = t.matmul(v, w)?;
            weighted_sum(t, h, 4)
        },
        &o,
    )
    .unwrap();
    let failed: Vec<_> = report.failures().map(|p| p.name.clone()).collect();
    assert_eq!(failed, vec!["v".to_string()]);
}

#[test]
fn nondeterministic_function_is_rejected() {
    let s = store_with(12, &[("w", &[2, 2])]);
    let calls = Cell::new(0u32);
    let err = grad_check(
        &s,
        |t: &mut Tape<'_, f64>| -> Result<Var, NumericsError> {
            calls.set(calls.get() + 1);
            let w = t.param_named("w")?;
            let y = t.scale(w, 1.0 + calls.get() as f64 * 1e-3)?;
            t.sum(y)
        },
        &opts(),
    )
    .unwrap_err();
    assert!(matches!(err, NumericsError::Nondeterministic { .. }));
}

#[test]
fn finite_check_flags_overflow() {
    let mut s = ParamStore::new();
    s.insert("x", Tensor::vector(vec![f64::MAX, f64::MAX])).unwrap();
    let mut tape = Tape::new(&s).with_finite_check(true);
    let x = tape.param_named("x").unwrap();
    let err = tape.scale(x, 10.0).unwrap_err();
    assert_eq!(err, NumericsError::NonFinite { op: "scale" });
}

#[test]
fn forward_is_bitwise_repeatable() {
    let s = store_with(13, &[("a", &[5, 7]), ("b", &[7, 7]), ("g", &[7]), ("bias", &[7])]);
    let run = || {
        let mut t = Tape::new(&s);
        let (a, b, g, bias) = (
            t.param_named("a").unwrap(),
            t.param_named("b").unwrap(),
            t.param_named("g").unwrap(),
            t.param_named("bias").unwrap(),
        );
        let h = t.matmul(a, b).unwrap();
        let h = t.gelu(h).unwrap();
        let h = t.layer_norm(h, g, bias, 1e-5).unwrap();
        let h = t.softmax_rows(h, None).unwrap();
        t.value(h).clone()
    };
    assert!(run().bit_eq(&run()));
}

#[test]
fn shared_input_accumulates_gradient() {
    // d/dx sum(x ⊙ x-as-constant-free) via x used twice in add.
    let mut s = ParamStore::new();
    s.insert("x", Tensor::vector(vec![1.0, 2.0])).unwrap();
    let mut t = Tape::new(&s);
    let x = t.param_named("x").unwrap();
    let y = t.add(x, x).unwrap();
    let l = t.sum(y).unwrap();
    let g = t.backward(l).unwrap();
    assert_eq!(g.get(s.require("x").unwrap()).unwrap().data(), &[2.0, 2.0]);
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(vals in prop::collection::vec(-30.0f64..30.0, 5..40)) {
        let cols = 5;
        let rows = vals.len() / cols;
        let x = Tensor::new(vec![rows, cols], vals[..rows * cols].to_vec()).unwrap();
        let y = luke_core::numerics::softmax(&x, 1).unwrap();
        for r in 0..rows {
            let s: f64 = y.row(r).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
        let x32: Tensor<f32> = x.cast();
        let y32 = luke_core::numerics::softmax(&x32, 1).unwrap();
        for r in 0..rows {
            let s: f32 = y32.row(r).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_standardizes(vals in prop::collection::vec(-50.0f64..50.0, 8)) {
        let x = Tensor::new(vec![1, 8], vals.clone()).unwrap();
        let var: f64 = {
            let m = vals.iter().sum::<f64>() / 8.0;
            vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 8.0
        };
        prop_assume!(var > 1.0);
        let g = Tensor::full(vec![8], 1.0);
        let b = Tensor::zeros(vec![8]);
        let y = luke_core::numerics::layer_norm(&x, &g, &b, 1e-5).unwrap();
        let mean = y.data().iter().sum::<f64>() / 8.0;
        let v = y.data().iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / 8.0;
        prop_assert!(mean.abs() < 1e-5);
        prop_assert!((v - 1.0).abs() < 1e-5);
    }
}

#[test]
fn random_small_inputs_pass_for_several_seeds() {
    for seed in 20..25 {
        let s = store_with(seed, &[("x", &[2, 4]), ("w", &[3, 4]), ("g", &[3]), ("b", &[3])]);
        assert_pass(&s, |t| {
            let (x, w, g, b) = (t.param_named("x")?, t.param_named("w")?, t.param_named("g")?, t.param_named("b")?);
            let h = t.matmul_nt(x, w)?;
            let h = t.gelu(h)?;
            let h = t.layer_norm(h, g, b, 1e-5)?;
            let p = t.softmax_rows(h, None)?;
            weighted_sum(t, p, seed)
        });
    }
}
