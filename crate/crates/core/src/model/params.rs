use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::numerics::{ParamStore, Scalar, Tensor};

use super::config::{AttentionMode, ModelConfig};
use super::ModelError;

pub mod names {
    pub const A: &str = "embeddings.A";
    pub const B: &str = "embeddings.B";
    pub const U: &str = "embeddings.U";
    pub const C: &str = "embeddings.C";
    pub const DPOS: &str = "embeddings.Dpos";
    pub const E_TYPE: &str = "embeddings.e_type";
    pub const EMB_LN_GAIN: &str = "embeddings.ln.gain";
    pub const EMB_LN_BIAS: &str = "embeddings.ln.bias";

    pub const MLM_DENSE_W: &str = "heads.mlm.dense.weight";
    pub const MLM_DENSE_B: &str = "heads.mlm.dense.bias";
    pub const MLM_LN_GAIN: &str = "heads.mlm.ln.gain";
    pub const MLM_LN_BIAS: &str = "heads.mlm.ln.bias";
    pub const MLM_BIAS: &str = "heads.mlm.bias";

    pub const ENT_W_H: &str = "heads.entity.W_h";
    pub const ENT_B_H: &str = "heads.entity.b_h";
    pub const ENT_LN_GAIN: &str = "heads.entity.ln.gain";
    pub const ENT_LN_BIAS: &str = "heads.entity.ln.bias";
    pub const ENT_T: &str = "heads.entity.T";
    pub const ENT_B_O: &str = "heads.entity.b_o";

    pub fn layer(i: usize, leaf: &str) -> String {
        format!("layers.{i}.{leaf}")
    }

    pub const Q: &str = "attn.Q";
    pub const K: &str = "attn.K";
    pub const V: &str = "attn.V";
    pub const Q_W2E: &str = "attn.Q_w2e";
    pub const Q_E2W: &str = "attn.Q_e2w";
    pub const Q_E2E: &str = "attn.Q_e2e";
    pub const ATTN_OUT_W: &str = "attn.out.weight";
    pub const ATTN_OUT_B: &str = "attn.out.bias";
    pub const ATTN_LN_GAIN: &str = "attn.ln.gain";
    pub const ATTN_LN_BIAS: &str = "attn.ln.bias";
    pub const FFN_IN_W: &str = "ffn.in.weight";
    pub const FFN_IN_B: &str = "ffn.in.bias";
    pub const FFN_OUT_W: &str = "ffn.out.weight";
    pub const FFN_OUT_B: &str = "ffn.out.bias";
    pub const FFN_LN_GAIN: &str = "ffn.ln.gain";
    pub const FFN_LN_BIAS: &str = "ffn.ln.bias";

    pub const EXTRA_QUERIES: [&str; 3] = [Q_W2E, Q_E2W, Q_E2E];
}

/// Named parameter groups used for freezing and reporting.
pub const PARAM_GROUPS: [&str; 6] =
    ["word_embeddings", "entity_embeddings", "layers", "mlm_head", "entity_head", "task_head"];

/// Whether `name` belongs to the named group. Unknown group names are an error.
pub fn in_group(name: &str, group: &str) -> Result<bool, ModelError> {
    Ok(match group {
        "word_embeddings" => {
            name == names::A || name == names::C || name == names::EMB_LN_GAIN || name == names::EMB_LN_BIAS
        }
        "entity_embeddings" => {
            name == names::B || name == names::U || name == names::DPOS || name == names::E_TYPE
        }
        "layers" => name.starts_with("layers."),
        "mlm_head" => name.starts_with("heads.mlm."),
        "entity_head" => name.starts_with("heads.entity."),
        "task_head" => name.starts_with("task."),
        other => {
            return Err(ModelError::Config(format!(
                "unknown parameter group `{other}` (expected one of {})",
                PARAM_GROUPS.join(", ")
            )))
        }
    })
}

/// Biases and layer-norm parameters are exempt from weight decay.
pub fn is_no_decay(name: &str) -> bool {
    name.ends_with("bias") || name.contains(".ln.") || name.ends_with(".b_h") || name.ends_with(".b_o")
}

/// Reporting label: the parameter name with the layer index removed.
pub fn param_group_label(name: &str) -> String {
    if let Some(rest) = name.strip_prefix("layers.") {
        if let Some((_, leaf)) = rest.split_once('.') {
            return format!("layers.{leaf}");
        }
    }
    name.to_string()
}

/// Normal(0, std) initializer drawing in a fixed order from one seeded stream.
pub struct Initializer {
    rng: ChaCha8Rng,
    normal: Normal<f64>,
}

impl Initializer {
    pub fn new(seed: u64, std: f64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), normal: Normal::new(0.0, std).expect("positive std") }
    }

    pub fn normal<T: Scalar>(&mut self, shape: &[usize]) -> Tensor<T> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::of(self.normal.sample(&mut self.rng))).collect();
        Tensor::new(shape.to_vec(), data).expect("shape matches data")
    }
}

fn put<T: Scalar>(store: &mut ParamStore<T>, name: &str, t: Tensor<T>) -> Result<(), ModelError> {
    store.insert(name, t)?;
    Ok(())
}

/// Fresh encoder parameters (embeddings and layers, no heads).
pub fn init_encoder<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ParamStore<T>, ModelError> {
    cfg.validate()?;
    let d = cfg.hidden_size;
    let f = cfg.ffn_size();
    let mut init = Initializer::new(seed, cfg.init_std);
    let mut s = ParamStore::new();
    put(&mut s, names::A, init.normal(&[cfg.word_vocab_size, d]))?;
    put(&mut s, names::B, init.normal(&[cfg.entity_vocab_size, cfg.entity_dim]))?;
    put(&mut s, names::U, init.normal(&[cfg.entity_dim, d]))?;
    // Entity positions start aligned with word positions.
    let c: Tensor<T> = init.normal(&[cfg.max_positions, d]);
    put(&mut s, names::C, c.clone())?;
    put(&mut s, names::DPOS, c)?;
    put(&mut s, names::E_TYPE, init.normal(&[d]))?;
    put(&mut s, names::EMB_LN_GAIN, Tensor::full(vec![d], T::one()))?;
    put(&mut s, names::EMB_LN_BIAS, Tensor::zeros(vec![d]))?;
    for i in 0..cfg.num_layers {
        let l = |leaf: &str| names::layer(i, leaf);
        put(&mut s, &l(names::Q), init.normal(&[d, d]))?;
        put(&mut s, &l(names::K), init.normal(&[d, d]))?;
        put(&mut s, &l(names::V), init.normal(&[d, d]))?;
        if cfg.attention_mode == AttentionMode::EntityAware {
            for q in names::EXTRA_QUERIES {
                put(&mut s, &l(q), init.normal(&[d, d]))?;
            }
        }
        put(&mut s, &l(names::ATTN_OUT_W), init.normal(&[d, d]))?;
        put(&mut s, &l(names::ATTN_OUT_B), Tensor::zeros(vec![d]))?;
        put(&mut s, &l(names::ATTN_LN_GAIN), Tensor::full(vec![d], T::one()))?;
        put(&mut s, &l(names::ATTN_LN_BIAS), Tensor::zeros(vec![d]))?;
        put(&mut s, &l(names::FFN_IN_W), init.normal(&[f, d]))?;
        put(&mut s, &l(names::FFN_IN_B), Tensor::zeros(vec![f]))?;
        put(&mut s, &l(names::FFN_OUT_W), init.normal(&[d, f]))?;
        put(&mut s, &l(names::FFN_OUT_B), Tensor::zeros(vec![d]))?;
        put(&mut s, &l(names::FFN_LN_GAIN), Tensor::full(vec![d], T::one()))?;
        put(&mut s, &l(names::FFN_LN_BIAS), Tensor::zeros(vec![d]))?;
    }
    Ok(s)
}

/// Adds the masked-word and masked-entity prediction heads.
pub fn init_pretraining_heads<T: Scalar>(store: &mut ParamStore<T>, cfg: &ModelConfig, seed: u64) -> Result<(), ModelError> {
    let d = cfg.hidden_size;
    let mut init = Initializer::new(seed ^ 0x6865_6164_7321, cfg.init_std);
    put(store, names::MLM_DENSE_W, init.normal(&[d, d]))?;
    put(store, names::MLM_DENSE_B, Tensor::zeros(vec![d]))?;
    put(store, names::MLM_LN_GAIN, Tensor::full(vec![d], T::one()))?;
    put(store, names::MLM_LN_BIAS, Tensor::zeros(vec![d]))?;
    put(store, names::MLM_BIAS, Tensor::zeros(vec![cfg.word_vocab_size]))?;
    put(store, names::ENT_W_H, init.normal(&[d, d]))?;
    put(store, names::ENT_B_H, Tensor::zeros(vec![d]))?;
    put(store, names::ENT_LN_GAIN, Tensor::full(vec![d], T::one()))?;
    put(store, names::ENT_LN_BIAS, Tensor::zeros(vec![d]))?;
    put(store, names::ENT_T, init.normal(&[cfg.entity_dim, d]))?;
    put(store, names::ENT_B_O, Tensor::zeros(vec![cfg.entity_vocab_size]))?;
    Ok(())
}

/// Sets Q_w2e, Q_e2w and Q_e2e of every layer to a copy of that layer's Q,
/// creating them if absent.
pub fn copy_query_into_extra<T: Scalar>(store: &mut ParamStore<T>, cfg: &ModelConfig) -> Result<(), ModelError> {
    for i in 0..cfg.num_layers {
        let q = store.get(store.require(&names::layer(i, names::Q))?).clone();
        for extra in names::EXTRA_QUERIES {
            let name = names::layer(i, extra);
            if store.contains(&name) {
                store.set(&name, q.clone())?;
            } else {
                store.insert(name, q.clone())?;
            }
        }
    }
    Ok(())
}

/// Checks that `store` has every encoder tensor `cfg` needs, with matching shapes.
pub fn check_encoder_params<T: Scalar>(store: &ParamStore<T>, cfg: &ModelConfig) -> Result<(), ModelError> {
    let reference = init_encoder::<T>(&ModelConfig { init_std: 1.0, ..cfg.clone() }, 0)?;
    for (_, name, t) in reference.iter() {
        let have = store
            .by_name(name)
            .ok_or_else(|| ModelError::Validation(format!("missing parameter `{name}`")))?;
        if have.shape() != t.shape() {
            return Err(ModelError::Validation(format!(
                "parameter `{name}` has shape {:?}, config expects {:?}",
                have.shape(),
                t.shape()
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded_and_shaped() {
        let cfg = ModelConfig::tiny();
        let a = init_encoder::<f64>(&cfg, 3).unwrap();
        let b = init_encoder::<f64>(&cfg, 3).unwrap();
        let c = init_encoder::<f64>(&cfg, 4).unwrap();
        assert!(a.by_name(names::A).unwrap().bit_eq(b.by_name(names::A).unwrap()));
        assert!(!a.by_name(names::A).unwrap().bit_eq(c.by_name(names::A).unwrap()));
        assert_eq!(a.by_name(names::U).unwrap().shape(), [4, 8]);
        assert!(a.contains("layers.1.attn.Q_e2e"));
        assert!(a.by_name("layers.0.attn.ln.gain").unwrap().data().iter().all(|&g| g == 1.0));
        check_encoder_params(&a, &cfg).unwrap();
    }

    #[test]
    fn original_mode_has_no_extra_queries() {
        let cfg = ModelConfig { attention_mode: AttentionMode::Original, ..ModelConfig::tiny() };
        let mut s = init_encoder::<f64>(&cfg, 0).unwrap();
        assert!(!s.contains("layers.0.attn.Q_w2e"));
        copy_query_into_extra(&mut s, &cfg).unwrap();
        let q = s.by_name("layers.0.attn.Q").unwrap();
        assert!(q.bit_eq(s.by_name("layers.0.attn.Q_e2w").unwrap()));
    }

    #[test]
    fn groups_and_decay() {
        assert!(in_group(names::A, "word_embeddings").unwrap());
        assert!(in_group("layers.3.ffn.in.weight", "layers").unwrap());
        assert!(!in_group(names::B, "word_embeddings").unwrap());
        assert!(in_group("x", "nonsense").is_err());
        assert!(is_no_decay("layers.0.ffn.in.bias"));
        assert!(is_no_decay(names::EMB_LN_GAIN));
        assert!(is_no_decay(names::ENT_B_O));
        assert!(!is_no_decay(names::ENT_T));
        assert_eq!(param_group_label("layers.12.attn.Q_e2w"), "layers.attn.Q_e2w");
    }
}
