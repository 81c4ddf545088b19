//! Run configuration: one JSON object whose sections mirror the library
//! configs. Every key has a default and unknown keys are rejected.

use std::path::{Path, PathBuf};

use luke_core::model::{AttentionMode, Checkpoint, ModelConfig};
use luke_core::pretrain::PretrainConfig;
use luke_core::tasks::FinetuneConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Annotated corpus (JSON lines).
    pub corpus: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub dictionary: Option<PathBuf>,
    /// Task files (JSON lines) for fine-tuning and evaluation.
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Words per training sequence, including [CLS] and [SEP].
    pub max_seq_len: usize,
    /// `null` keeps every word / entity.
    pub word_vocab_size: Option<usize>,
    pub entity_vocab_size: Option<usize>,
    pub annotation_threshold: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            vocab: None,
            dictionary: None,
            train: None,
            dev: None,
            test: None,
            max_seq_len: 32,
            word_vocab_size: None,
            entity_vocab_size: None,
            annotation_threshold: luke_core::corpus::DEFAULT_LINK_PROBABILITY_THRESHOLD,
        }
    }
}

impl DataConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.max_seq_len < luke_core::corpus::MIN_WINDOW {
            out.push(format!("data.max_seq_len ({}) must be at least {}", self.max_seq_len, luke_core::corpus::MIN_WINDOW));
        }
        if !(0.0..=1.0).contains(&self.annotation_threshold) {
            out.push(format!("data.annotation_threshold ({}) must be in [0, 1]", self.annotation_threshold));
        }
        for (k, v) in [("word_vocab_size", self.word_vocab_size), ("entity_vocab_size", self.entity_vocab_size)] {
            if v == Some(0) {
                out.push(format!("data.{k} must be positive"));
            }
        }
        out
    }
}

/// Limits applied to the task spec derived from the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskLimits {
    pub max_span_len: usize,
    pub max_answer_len: usize,
    pub max_entities_per_pass: usize,
}

impl Default for TaskLimits {
    fn default() -> Self {
        let spec = luke_core::tasks::TaskSpec::new(luke_core::tasks::TaskKind::Typing, Vec::new());
        Self {
            max_span_len: spec.max_span_len,
            max_answer_len: spec.max_answer_len,
            max_entities_per_pass: spec.max_entities_per_pass,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    /// Encoder shape; vocabulary sizes are taken from the generated data.
    pub model: ModelConfig,
    pub tolerance: f64,
    pub step: f64,
    pub samples_per_param: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { model: ModelConfig::tiny(), tolerance: 1e-5, step: 1e-5, samples_per_param: 6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub precision: Precision,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub task: TaskLimits,
    pub data: DataConfig,
    pub gradcheck: GradcheckConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            precision: Precision::F64,
            model: ModelConfig::toy(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            task: TaskLimits::default(),
            data: DataConfig::default(),
            gradcheck: GradcheckConfig::default(),
        }
    }
}

/// Command-line overrides shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub mlm_only: bool,
    pub no_entities: bool,
    pub attention: Option<AttentionMode>,
    pub precision: Option<Precision>,
}

/// Copy of `given` without the keys `reference` lacks; each dropped key is
/// reported.
fn prune_unknown(given: &Value, reference: &Value, path: &str, out: &mut Vec<String>) -> Value {
    let (Value::Object(g), Value::Object(r)) = (given, reference) else { return given.clone() };
    let mut kept = Map::new();
    for (k, v) in g {
        let here = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
        match r.get(k) {
            None => out.push(format!("unknown key `{here}`")),
            Some(rv) => {
                kept.insert(k.clone(), prune_unknown(v, rv, &here, out));
            }
        }
    }
    Value::Object(kept)
}

fn section<T: serde::de::DeserializeOwned + Serialize + Default>(
    obj: &Map<String, Value>,
    key: &str,
    out: &mut Vec<String>,
) -> T {
    match obj.get(key) {
        None => T::default(),
        Some(v) => serde_json::from_value(v.clone()).unwrap_or_else(|e| {
            out.push(format!("{key}: {e}"));
            T::default()
        }),
    }
}

impl RunConfig {
    /// Parses a config, reporting every unknown key, type error and
    /// out-of-range value together.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| CliError::Validation(format!("config is not valid JSON: {e}")))?;
        if !value.is_object() {
            return Err(CliError::Validation("config must be a JSON object".into()));
        }
        let mut problems = Vec::new();
        let reference = serde_json::to_value(RunConfig::default()).expect("config serializes");
        let Value::Object(obj) = &prune_unknown(&value, &reference, "", &mut problems) else { unreachable!() };
        let mut cfg = RunConfig {
            seed: section(obj, "seed", &mut problems),
            precision: section(obj, "precision", &mut problems),
            model: section(obj, "model", &mut problems),
            pretrain: section(obj, "pretrain", &mut problems),
            finetune: section(obj, "finetune", &mut problems),
            task: section(obj, "task", &mut problems),
            data: section(obj, "data", &mut problems),
            gradcheck: section(obj, "gradcheck", &mut problems),
        };
        if obj.get("model").is_none() {
            cfg.model = ModelConfig::toy();
        }
        if !problems.is_empty() {
            problems.extend(cfg.problems());
            return Err(CliError::Validation(problems.join("\n")));
        }
        Ok(cfg)
    }

    /// Reads a JSON config, or the config embedded in a checkpoint.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        if bytes.starts_with(luke_core::model::checkpoint::MAGIC) {
            let ckpt = Checkpoint::<f64>::from_bytes(&bytes).map_err(|e| CliError::Validation(e.to_string()))?;
            let embedded = ckpt
                .metadata
                .get("run_config")
                .ok_or_else(|| CliError::Validation(format!("{} carries no run config", path.display())))?;
            return Self::from_json(&embedded.to_string());
        }
        let text = String::from_utf8(bytes).map_err(|_| CliError::Validation("config is not UTF-8".into()))?;
        Self::from_json(&text)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(n) = o.steps {
            self.pretrain.total_steps = n;
            self.finetune.steps = n;
            self.pretrain.warmup_steps = self.pretrain.warmup_steps.min(n.saturating_sub(1));
        }
        if o.mlm_only {
            self.pretrain.entity_loss_enabled = false;
        }
        if o.no_entities {
            self.model.use_entity_inputs = false;
            self.gradcheck.model.use_entity_inputs = false;
        }
        if let Some(m) = o.attention {
            self.model.attention_mode = m;
            self.finetune.attention_mode = m;
            self.gradcheck.model.attention_mode = m;
        }
        if let Some(p) = o.precision {
            self.precision = p;
        }
    }

    /// Every range problem across all sections.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        out.extend(self.model.problems().into_iter().map(|p| format!("model: {p}")));
        out.extend(self.pretrain.problems());
        out.extend(self.finetune.problems());
        out.extend(self.data.problems());
        out.extend(self.gradcheck.model.problems().into_iter().map(|p| format!("gradcheck.model: {p}")));
        if self.task.max_span_len == 0 || self.task.max_answer_len == 0 || self.task.max_entities_per_pass == 0 {
            out.push("task limits must be positive".into());
        }
        if !(self.gradcheck.tolerance > 0.0 && self.gradcheck.step > 0.0) {
            out.push("gradcheck.tolerance and gradcheck.step must be positive".into());
        }
        out
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(CliError::Validation(p.join("\n")))
        }
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
