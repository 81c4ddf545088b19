use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use luke_core::corpus::{
    annotate, build_dictionary, build_vocab, ingest, read_documents, window, AnnotatedDocument, EntityAnnotation,
    EntityDictionary, PageDictionary, TrainingSequence, Vocabulary,
};
use luke_core::fsio::atomic_write;
use luke_core::model::{Checkpoint, ModelConfig};
use luke_core::numerics::{ParamStore, Scalar};
use luke_core::pretrain::{TrainEvent, Trainer};
use luke_core::tasks::{
    parse_task_line, primary, read_task_file, score, FineTuner, FinetuneConfig, Prediction, TaskExample, TaskKind,
    TaskSpec,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::config::{Precision, RunConfig};
use crate::CliError;

pub const VOCAB_FILE: &str = "vocab.json";
pub const DICTIONARY_FILE: &str = "dictionary.tsv";
pub const PRETRAIN_CHECKPOINT: &str = "pretrain.luke";
pub const PRETRAIN_LOG: &str = "pretrain_metrics.jsonl";
pub const FINETUNE_CHECKPOINT: &str = "finetune.luke";
pub const FINETUNE_LOG: &str = "finetune_metrics.jsonl";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const FINETUNE_KIND: &str = "finetune";

fn need<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, CliError> {
    p.as_deref().ok_or_else(|| CliError::Validation(format!("no {what} given (set data.{what} in the config)")))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    atomic_write(path, bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn jsonl<S: Serialize>(items: &[S]) -> String {
    items.iter().map(|i| serde_json::to_string(i).expect("serializable") + "\n").collect()
}

pub fn read_corpus(path: &Path) -> Result<Vec<AnnotatedDocument>, CliError> {
    let docs = ingest(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    docs.collect::<Result<Vec<_>, _>>().map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

pub fn load_vocab(path: &Path) -> Result<Vocabulary, CliError> {
    Vocabulary::load(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

pub fn load_dictionary(path: &Path) -> Result<EntityDictionary, CliError> {
    let file = File::open(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    EntityDictionary::read_tsv(BufReader::new(file)).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

pub fn cmd_build_vocab(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let docs = read_corpus(need(&cfg.data.corpus, "corpus")?)?;
    let vocab = build_vocab(
        &docs,
        cfg.data.word_vocab_size.unwrap_or(usize::MAX),
        cfg.data.entity_vocab_size.unwrap_or(usize::MAX),
    )?;
    let path = out.join(VOCAB_FILE);
    write(&path, vocab.to_json().as_bytes())?;
    Ok(format!(
        "wrote {} ({} words, {} entities from {} documents)",
        path.display(),
        vocab.word_count(),
        vocab.entity_count(),
        docs.len()
    ))
}

pub fn cmd_build_dict(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let docs = read_corpus(need(&cfg.data.corpus, "corpus")?)?;
    let dict = build_dictionary(&docs);
    let path = out.join(DICTIONARY_FILE);
    write(&path, dict.to_tsv().as_bytes())?;
    Ok(format!("wrote {} ({} names)", path.display(), dict.len()))
}

/// Training sequences of the configured corpus under `vocab`.
pub fn training_sequences(cfg: &RunConfig, vocab: &Vocabulary) -> Result<Vec<TrainingSequence>, CliError> {
    let docs = read_corpus(need(&cfg.data.corpus, "corpus")?)?;
    let mut out = Vec::new();
    for d in &docs {
        out.extend(window(d, vocab, cfg.data.max_seq_len)?);
    }
    if out.is_empty() {
        return Err(CliError::Validation("the corpus yields no training sequences".into()));
    }
    Ok(out)
}

fn provenance(cfg: &RunConfig, vocab: &Vocabulary) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("run_config".into(), cfg.to_value());
    m.insert("vocab_digest".into(), Value::from(vocab.digest()));
    m
}

fn check_vocab(meta: &Map<String, Value>, vocab: &Vocabulary) -> Result<(), CliError> {
    match meta.get("vocab_digest").and_then(Value::as_str) {
        Some(d) if d == vocab.digest() => Ok(()),
        Some(_) => Err(CliError::Validation(
            "vocabulary mismatch: the checkpoint was trained with a different vocabulary".into(),
        )),
        None => Err(CliError::Validation("checkpoint records no vocabulary digest".into())),
    }
}

/// Pretrains from scratch, or continues the run stored in `resume`.
pub fn cmd_pretrain(cfg: &RunConfig, out: &Path, resume: Option<&Path>) -> Result<String, CliError> {
    match cfg.precision {
        Precision::F32 => pretrain::<f32>(cfg, out, resume),
        Precision::F64 => pretrain::<f64>(cfg, out, resume),
    }
}

fn pretrain<T: Scalar>(cfg: &RunConfig, out: &Path, resume: Option<&Path>) -> Result<String, CliError> {
    let vocab = load_vocab(need(&cfg.data.vocab, "vocab")?)?;
    let data = training_sequences(cfg, &vocab)?;
    let (mut trainer, run_cfg) = match resume {
        Some(path) => {
            let ckpt = Checkpoint::<T>::load(path)?;
            check_vocab(&ckpt.metadata, &vocab)?;
            let run_cfg = match ckpt.metadata.get("run_config") {
                Some(v) => RunConfig::from_json(&v.to_string())?,
                None => cfg.clone(),
            };
            (Trainer::<T>::from_checkpoint(&ckpt)?, run_cfg)
        }
        None => {
            let model = ModelConfig {
                word_vocab_size: vocab.word_count(),
                entity_vocab_size: vocab.entity_count(),
                ..cfg.model.clone()
            };
            if cfg.data.max_seq_len > model.max_positions {
                return Err(CliError::Validation(format!(
                    "data.max_seq_len ({}) exceeds model.max_positions ({})",
                    cfg.data.max_seq_len, model.max_positions
                )));
            }
            (Trainer::<T>::new(model, cfg.pretrain.clone(), cfg.seed)?, cfg.clone())
        }
    };
    std::fs::create_dir_all(out)?;
    let meta = provenance(&run_cfg, &vocab);
    let log_path = out.join(PRETRAIN_LOG);
    let mut log = String::new();
    let until = trainer.config.total_steps;
    let mut last = None;
    trainer.run(&data, until, |ev| {
        match ev {
            TrainEvent::Log(r) => {
                log.push_str(&(serde_json::to_string(r).expect("record serializes") + "\n"));
                last = Some(r.clone());
            }
            TrainEvent::Checkpoint(t) => {
                t.to_checkpoint(meta.clone()).save(&out.join(format!("pretrain-{:06}.luke", t.step)))?;
                atomic_write(&log_path, log.as_bytes())?;
            }
        }
        Ok(())
    })?;
    let ckpt_path = out.join(PRETRAIN_CHECKPOINT);
    trainer.to_checkpoint(meta).save(&ckpt_path)?;
    write(&log_path, log.as_bytes())?;
    let tail = last
        .map(|r| format!("; last mlm_loss {:.4}, entity_loss {:.4}", r.mlm_loss, r.entity_loss))
        .unwrap_or_default();
    Ok(format!("pretrained to step {}; wrote {}{tail}", trainer.step, ckpt_path.display()))
}

/// Encoder parameters of a pretraining checkpoint (optimizer state removed).
fn pretrained_params<T: Scalar>(ckpt: &Checkpoint<T>) -> Result<(ModelConfig, ParamStore<T>), CliError> {
    let model: ModelConfig = ckpt
        .metadata
        .get("model")
        .cloned()
        .map(serde_json::from_value)
        .transpose()
        .map_err(|e| CliError::Validation(format!("checkpoint model config: {e}")))?
        .ok_or_else(|| CliError::Validation("checkpoint has no model config".into()))?;
    let mut store = ParamStore::new();
    for (name, t) in &ckpt.tensors {
        if !name.starts_with("optim.") {
            store.insert(name.as_str(), t.clone())?;
        }
    }
    Ok((model, store))
}

pub fn read_examples(path: &Path, kind: TaskKind) -> Result<Vec<TaskExample>, CliError> {
    let examples = read_task_file(path)?;
    if let Some(ex) = examples.iter().find(|e| e.kind() != kind) {
        return Err(CliError::Validation(format!(
            "{}: example `{}` is {}, expected {kind}",
            path.display(),
            ex.id(),
            ex.kind()
        )));
    }
    Ok(examples)
}

fn task_spec(cfg: &RunConfig, kind: TaskKind, train: &[TaskExample]) -> Result<TaskSpec, CliError> {
    let mut spec = TaskSpec::from_examples(kind, train)?;
    spec.max_span_len = cfg.task.max_span_len;
    spec.max_answer_len = cfg.task.max_answer_len;
    spec.max_entities_per_pass = cfg.task.max_entities_per_pass;
    Ok(spec)
}

pub fn cmd_finetune(cfg: &RunConfig, out: &Path, kind: TaskKind, init: &Path) -> Result<String, CliError> {
    match cfg.precision {
        Precision::F32 => finetune::<f32>(cfg, out, kind, init),
        Precision::F64 => finetune::<f64>(cfg, out, kind, init),
    }
}

fn finetune<T: Scalar>(cfg: &RunConfig, out: &Path, kind: TaskKind, init: &Path) -> Result<String, CliError> {
    let vocab = load_vocab(need(&cfg.data.vocab, "vocab")?)?;
    let ckpt = Checkpoint::<T>::load(init)?;
    check_vocab(&ckpt.metadata, &vocab)?;
    if ckpt.metadata.get("kind").and_then(Value::as_str) == Some(FINETUNE_KIND) {
        return Err(CliError::Validation(format!("{} is already a fine-tuned checkpoint", init.display())));
    }
    let (mut model, params) = pretrained_params(&ckpt)?;
    if !cfg.model.use_entity_inputs {
        model.use_entity_inputs = false;
    }
    let train = read_examples(need(&cfg.data.train, "train")?, kind)?;
    if train.is_empty() {
        return Err(CliError::Validation("the training set is empty".into()));
    }
    let (dev, dev_note) = match &cfg.data.dev {
        Some(p) => (read_examples(p, kind)?, String::new()),
        None => (train.clone(), " (no dev set given; early stopping on the training set)".to_string()),
    };
    let spec = task_spec(cfg, kind, &train)?;
    let mut tuner = FineTuner::new(&params, &model, spec, cfg.finetune.clone(), cfg.seed)?;
    let tp = tuner.prepare(&train, &vocab)?;
    let dp = tuner.prepare(&dev, &vocab)?;
    let mut log = String::new();
    let report = tuner.train(&tp, &dp, &dev, |r| log.push_str(&(serde_json::to_string(r).expect("record") + "\n")))?;

    let mut meta = provenance(cfg, &vocab);
    meta.insert("kind".into(), Value::from(FINETUNE_KIND));
    meta.insert("task".into(), serde_json::to_value(&tuner.spec).expect("spec serializes"));
    meta.insert("model".into(), serde_json::to_value(&tuner.model).expect("config serializes"));
    meta.insert("finetune".into(), serde_json::to_value(&tuner.config).expect("config serializes"));
    meta.insert("base_entity_vocab".into(), Value::from(tuner.base_entity_vocab as u64));
    meta.insert("seed".into(), Value::from(cfg.seed));
    meta.insert("report".into(), serde_json::to_value(&report).expect("report serializes"));
    let mut c = Checkpoint::new(meta);
    c.add_store(&tuner.params, "");
    std::fs::create_dir_all(out)?;
    let path = out.join(FINETUNE_CHECKPOINT);
    c.save(&path)?;
    write(&out.join(FINETUNE_LOG), log.as_bytes())?;
    Ok(format!(
        "fine-tuned {kind} for {} steps; best dev score {:.4} at step {}{dev_note}; wrote {}",
        report.steps_run,
        report.best_score,
        report.best_step,
        path.display()
    ))
}

fn tuner_from_checkpoint<T: Scalar>(ckpt: &Checkpoint<T>) -> Result<FineTuner<T>, CliError> {
    let meta = &ckpt.metadata;
    if meta.get("kind").and_then(Value::as_str) != Some(FINETUNE_KIND) {
        return Err(CliError::Validation("not a fine-tuned checkpoint".into()));
    }
    fn get<D: serde::de::DeserializeOwned>(meta: &Map<String, Value>, k: &str) -> Result<D, CliError> {
        let v = meta.get(k).cloned().ok_or_else(|| CliError::Validation(format!("checkpoint metadata lacks `{k}`")))?;
        serde_json::from_value(v).map_err(|e| CliError::Validation(format!("checkpoint metadata `{k}`: {e}")))
    }
    let mut params = ParamStore::new();
    for (name, t) in &ckpt.tensors {
        params.insert(name.as_str(), t.clone())?;
    }
    Ok(FineTuner {
        model: get(meta, "model")?,
        spec: get(meta, "task")?,
        config: get::<FinetuneConfig>(meta, "finetune")?,
        params,
        base_entity_vocab: get::<u64>(meta, "base_entity_vocab")? as usize,
        seed: get(meta, "seed")?,
    })
}

/// Fills a missing gold field with a placeholder so the example can be
/// encoded; returns whether the gold was present.
fn with_gold(mut v: Value, kind: TaskKind) -> (Value, bool) {
    let (key, fill) = match kind {
        TaskKind::Typing => ("labels", json!([])),
        TaskKind::Relation => ("label", json!(luke_core::tasks::NO_RELATION)),
        TaskKind::Ner => ("spans", json!([])),
        TaskKind::Cloze => (
            "answer",
            v.pointer("/candidates/0/title").cloned().unwrap_or(Value::String(String::new())),
        ),
        TaskKind::Extractive => ("answer", json!({"start": 0, "end": 1})),
    };
    let Value::Object(m) = &mut v else { return (v, true) };
    if m.contains_key(key) {
        return (v, true);
    }
    m.insert(key.into(), fill);
    (v, false)
}

/// Reads an evaluation file; gold fields may be missing on every line
/// (prediction-only mode) or on none.
pub fn read_eval_examples(path: &Path, kind: TaskKind) -> Result<(Vec<TaskExample>, bool), CliError> {
    let file = File::open(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    let mut gold_seen = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |m: String| CliError::Validation(format!("{}:{}: {m}", path.display(), i + 1));
        let v: Value = serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
        let (v, has_gold) = with_gold(v, kind);
        let ex = parse_task_line(&v.to_string()).map_err(|e| at(e.message()))?;
        if ex.kind() != kind {
            return Err(at(format!("example is {}, expected {kind}", ex.kind())));
        }
        gold_seen.push(has_gold);
        out.push(ex);
    }
    if out.is_empty() {
        return Err(CliError::Validation(format!("{}: the evaluation set is empty", path.display())));
    }
    let all = gold_seen.iter().all(|&g| g);
    if !all && gold_seen.iter().any(|&g| g) {
        return Err(CliError::Validation(format!(
            "{}: gold labels are present on some lines and missing on others",
            path.display()
        )));
    }
    Ok((out, all))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub task: TaskKind,
    pub examples: usize,
    pub gold: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact_match: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub primary: Option<f64>,
}

pub fn cmd_eval(cfg: &RunConfig, out: &Path, checkpoint: &Path, data: Option<&Path>) -> Result<String, CliError> {
    match cfg.precision {
        Precision::F32 => eval::<f32>(cfg, out, checkpoint, data),
        Precision::F64 => eval::<f64>(cfg, out, checkpoint, data),
    }
}

fn eval<T: Scalar>(cfg: &RunConfig, out: &Path, checkpoint: &Path, data: Option<&Path>) -> Result<String, CliError> {
    let ckpt = Checkpoint::<T>::load(checkpoint)?;
    let vocab = load_vocab(need(&cfg.data.vocab, "vocab")?)?;
    check_vocab(&ckpt.metadata, &vocab)?;
    let tuner = tuner_from_checkpoint(&ckpt)?;
    let kind = tuner.spec.kind;
    let path = match data {
        Some(p) => p,
        None => need(&cfg.data.test, "test")?,
    };
    let (examples, gold) = read_eval_examples(path, kind)?;
    let prepared = tuner.prepare(&examples, &vocab)?;
    let records = tuner.predict(&prepared)?;
    write(&out.join(PREDICTIONS_FILE), jsonl(&records).as_bytes())?;
    let mut metrics = EvalMetrics {
        task: kind,
        examples: examples.len(),
        gold,
        precision: None,
        recall: None,
        f1: None,
        exact_match: None,
        primary: None,
    };
    let summary = if gold {
        let preds: Vec<Prediction> = records.into_iter().map(|r| r.prediction).collect();
        let s = score(kind, &examples, &preds)?;
        metrics.precision = Some(s.precision);
        metrics.recall = Some(s.recall);
        metrics.f1 = Some(s.f1);
        metrics.exact_match = s.exact_match;
        metrics.primary = Some(primary(kind, &s));
        format!("{kind}: {} examples, primary score {:.4}", examples.len(), primary(kind, &s))
    } else {
        format!("{kind}: {} examples have no gold labels; wrote predictions only", examples.len())
    };
    let text = serde_json::to_string_pretty(&metrics).expect("metrics serialize") + "\n";
    write(&out.join(METRICS_FILE), text.as_bytes())?;
    Ok(summary)
}

/// One question of an annotation run. `passage_id` names the source page in
/// the passage file whose hyperlinks define the name mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionRecord {
    pub id: String,
    pub passage_id: String,
    pub words: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub id: String,
    pub passage_id: String,
    pub question: Vec<EntityAnnotation>,
    pub passage: Vec<EntityAnnotation>,
}

pub fn read_questions(path: &Path) -> Result<Vec<QuestionRecord>, CliError> {
    let file = File::open(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let q: QuestionRecord = serde_json::from_str(&line)
            .map_err(|e| CliError::Validation(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(q);
    }
    Ok(out)
}

/// Annotates every question and its passage with the passage page's own
/// hyperlink names, filtered by corpus-wide link probability.
pub fn annotate_all(
    questions: &[QuestionRecord],
    passages: &[AnnotatedDocument],
    dict: &EntityDictionary,
    threshold: f64,
) -> Result<Vec<AnnotationRecord>, CliError> {
    let by_id: HashMap<&str, &AnnotatedDocument> = passages.iter().map(|p| (p.id.as_str(), p)).collect();
    questions
        .iter()
        .map(|q| {
            let page = by_id.get(q.passage_id.as_str()).ok_or_else(|| {
                CliError::Validation(format!("question `{}` names unknown passage `{}`", q.id, q.passage_id))
            })?;
            let pd = PageDictionary::from_page(page, dict);
            let a = annotate(&q.words, &page.words, &pd, threshold);
            Ok(AnnotationRecord { id: q.id.clone(), passage_id: q.passage_id.clone(), question: a.question, passage: a.passage })
        })
        .collect()
}

pub fn cmd_annotate(
    cfg: &RunConfig,
    out: &Path,
    questions: &Path,
    passages: &Path,
    dictionary: Option<&Path>,
    threshold: Option<f64>,
) -> Result<String, CliError> {
    let threshold = threshold.unwrap_or(cfg.data.annotation_threshold);
    if !(0.0..=1.0).contains(&threshold) {
        return Err(CliError::Validation(format!("threshold {threshold} must be in [0, 1]")));
    }
    let dict = load_dictionary(match dictionary {
        Some(p) => p,
        None => need(&cfg.data.dictionary, "dictionary")?,
    })?;
    let qs = read_questions(questions)?;
    let file = File::open(passages).map_err(|e| CliError::Validation(format!("{}: {e}", passages.display())))?;
    let ps = read_documents(BufReader::new(file))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Validation(format!("{}: {e}", passages.display())))?;
    let records = annotate_all(&qs, &ps, &dict, threshold)?;
    let path = out.join(ANNOTATIONS_FILE);
    write(&path, jsonl(&records).as_bytes())?;
    let n: usize = records.iter().map(|r| r.question.len() + r.passage.len()).sum();
    Ok(format!("annotated {} questions ({n} entity mentions); wrote {}", records.len(), path.display()))
}
