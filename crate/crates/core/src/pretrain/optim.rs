use serde::{Deserialize, Serialize};

use crate::model::params::is_no_decay;
use crate::numerics::{Gradients, ParamStore, Scalar, Tensor};

use super::PretrainError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-6, weight_decay: 0.01 }
    }
}

impl AdamWConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                out.push(format!("optimizer.{name} ({b}) must be in [0, 1)"));
            }
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            out.push(format!("optimizer.eps ({}) must be positive", self.eps));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            out.push(format!("optimizer.weight_decay ({}) must be non-negative", self.weight_decay));
        }
        out
    }
}

/// First and second moments per parameter, with a per-parameter step count
/// so parameters that start training late get their own bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub steps: Vec<u64>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros: Vec<Tensor<T>> = store.iter().map(|(_, _, t)| Tensor::zeros(t.shape().to_vec())).collect();
        Self { v: zeros.clone(), m: zeros, steps: vec![0; store.len()] }
    }

    /// Grows the state for parameters appended to the store after creation.
    pub fn extend_for(&mut self, store: &ParamStore<T>) {
        for (id, _, t) in store.iter().skip(self.m.len()) {
            debug_assert_eq!(id.index(), self.m.len());
            self.m.push(Tensor::zeros(t.shape().to_vec()));
            self.v.push(Tensor::zeros(t.shape().to_vec()));
            self.steps.push(0);
        }
    }
}

/// One AdamW update with bias correction and decoupled weight decay
/// (p ← p − lr·wd·p, skipped for biases and layer-norm parameters).
/// Parameters for which `frozen` is true, or that have no gradient, are
/// left untouched along with their moments.
pub fn adamw_step<T: Scalar>(
    store: &mut ParamStore<T>,
    grads: &Gradients<T>,
    state: &mut OptimizerState<T>,
    cfg: &AdamWConfig,
    lr: f64,
    frozen: &dyn Fn(&str) -> bool,
) -> Result<(), PretrainError> {
    if state.m.len() != store.len() {
        return Err(PretrainError::Validation(format!(
            "optimizer state covers {} parameters, store has {}",
            state.m.len(),
            store.len()
        )));
    }
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = store.name(id).to_string();
        if frozen(&name) {
            continue;
        }
        let Some(g) = grads.get(id) else { continue };
        let i = id.index();
        let p = store.get_mut(id);
        if g.shape() != p.shape() || state.m[i].shape() != p.shape() {
            return Err(PretrainError::Validation(format!(
                "`{name}`: gradient {:?} / moment {:?} vs parameter {:?}",
                g.shape(),
                state.m[i].shape(),
                p.shape()
            )));
        }
        state.steps[i] += 1;
        let t = state.steps[i] as i32;
        let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
        let c1 = T::of(1.0 - cfg.beta1.powi(t));
        let c2 = T::of(1.0 - cfg.beta2.powi(t));
        let lr_t = T::of(lr);
        let eps = T::of(cfg.eps);
        let decay = if is_no_decay(&name) { T::one() } else { T::of(1.0 - lr * cfg.weight_decay) };
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mv = b1 * *mv + (T::one() - b1) * gv;
            *vv = b2 * *vv + (T::one() - b2) * gv * gv;
            let mhat = *mv / c1;
            let vhat = *vv / c2;
            *pv = *pv * decay - lr_t * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
