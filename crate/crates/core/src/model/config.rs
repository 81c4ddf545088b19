use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    #[default]
    Original,
    EntityAware,
}

impl AttentionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Original => "original",
            Self::EntityAware => "entity_aware",
        }
    }
}

impl fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttentionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "original" => Ok(Self::Original),
            "entity_aware" => Ok(Self::EntityAware),
            other => Err(format!("unknown attention mode `{other}` (expected original or entity_aware)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_size: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub head_dim: usize,
    pub entity_dim: usize,
    pub word_vocab_size: usize,
    pub entity_vocab_size: usize,
    pub max_positions: usize,
    pub ffn_multiplier: usize,
    pub attention_mode: AttentionMode,
    pub use_entity_inputs: bool,
    pub dropout: f64,
    pub layer_norm_eps: f64,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl ModelConfig {
    /// The configuration of the released large model.
    pub fn paper_large() -> Self {
        Self {
            hidden_size: 1024,
            num_layers: 24,
            num_heads: 16,
            head_dim: 64,
            entity_dim: 256,
            word_vocab_size: 50_000,
            entity_vocab_size: 500_000,
            max_positions: 514,
            ffn_multiplier: 4,
            attention_mode: AttentionMode::Original,
            use_entity_inputs: true,
            dropout: 0.1,
            layer_norm_eps: 1e-5,
            init_std: 0.02,
        }
    }

    /// Desk-scale default: D = 64, 2 layers, 4 heads of 16, H = 32.
    pub fn toy() -> Self {
        Self {
            hidden_size: 64,
            num_layers: 2,
            num_heads: 4,
            head_dim: 16,
            entity_dim: 32,
            word_vocab_size: 256,
            entity_vocab_size: 64,
            max_positions: 64,
            ffn_multiplier: 4,
            attention_mode: AttentionMode::Original,
            use_entity_inputs: true,
            dropout: 0.1,
            layer_norm_eps: 1e-5,
            init_std: 0.02,
        }
    }

    /// D = 8, 2 layers, 2 heads; the gradient-check size.
    pub fn tiny() -> Self {
        Self {
            hidden_size: 8,
            num_layers: 2,
            num_heads: 2,
            head_dim: 4,
            entity_dim: 4,
            word_vocab_size: 12,
            entity_vocab_size: 7,
            max_positions: 16,
            ffn_multiplier: 4,
            attention_mode: AttentionMode::EntityAware,
            use_entity_inputs: true,
            dropout: 0.0,
            layer_norm_eps: 1e-5,
            init_std: 0.5,
        }
    }

    pub fn ffn_size(&self) -> usize {
        self.hidden_size * self.ffn_multiplier
    }

    /// Every violated constraint, one message each.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.num_heads == 0 || self.head_dim == 0 || self.hidden_size == 0 {
            out.push("hidden_size, num_heads and head_dim must be positive".to_string());
        }
        if self.num_heads * self.head_dim != self.hidden_size {
            out.push(format!(
                "hidden_size ({}) must equal num_heads ({}) × head_dim ({})",
                self.hidden_size, self.num_heads, self.head_dim
            ));
        }
        if self.entity_dim == 0 || self.entity_dim > self.hidden_size {
            out.push(format!("entity_dim ({}) must be in 1..={}", self.entity_dim, self.hidden_size));
        }
        if self.word_vocab_size < 5 {
            out.push(format!("word_vocab_size ({}) must be at least 5", self.word_vocab_size));
        }
        if self.entity_vocab_size < 2 {
            out.push(format!("entity_vocab_size ({}) must be at least 2", self.entity_vocab_size));
        }
        if self.max_positions < 3 {
            out.push(format!("max_positions ({}) must be at least 3", self.max_positions));
        }
        if self.ffn_multiplier == 0 {
            out.push("ffn_multiplier must be positive".to_string());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            out.push(format!("dropout ({}) must be in [0, 1)", self.dropout));
        }
        if self.layer_norm_eps.is_nan() || self.layer_norm_eps <= 0.0 {
            out.push(format!("layer_norm_eps ({}) must be positive", self.layer_norm_eps));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            out.push(format!("init_std ({}) must be positive", self.init_std));
        }
        out
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ModelError::Config(problems.join("; ")))
        }
    }
}
