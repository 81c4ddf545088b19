//! Entry points shared by the cargo-fuzz targets and the seed-replay test.
//! Each takes arbitrary bytes, must never panic on bad input, and checks a
//! round-trip invariant whenever the input parses.

use luke_core::corpus::{parse_document_line, wikitext, EntityDictionary, Vocabulary};
use luke_core::model::Checkpoint;
use luke_core::tasks::parse_task_line;

use crate::config::RunConfig;

/// Target names; each is also the seed directory under `fuzz/corpus/`.
pub const TARGETS: [&str; 7] =
    ["corpus_line", "dictionary_tsv", "vocab_json", "checkpoint", "run_config", "task_line", "wikitext"];

pub fn run(target: &str, data: &[u8]) {
    match target {
        "corpus_line" => corpus_line(data),
        "dictionary_tsv" => dictionary_tsv(data),
        "vocab_json" => vocab_json(data),
        "checkpoint" => checkpoint(data),
        "run_config" => run_config(data),
        "task_line" => task_line(data),
        "wikitext" => wiki(data),
        other => panic!("unknown fuzz target `{other}`"),
    }
}

pub fn corpus_line(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(doc) = parse_document_line(text) {
        let again = parse_document_line(&serde_json::to_string(&doc).unwrap()).expect("re-parse");
        assert_eq!(doc, again);
    }
}

pub fn dictionary_tsv(data: &[u8]) {
    if let Ok(d) = EntityDictionary::read_tsv(data) {
        let again = EntityDictionary::read_tsv(d.to_tsv().as_bytes()).expect("re-parse");
        assert_eq!(d, again);
    }
}

pub fn vocab_json(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(v) = Vocabulary::from_json(text) {
        let again = Vocabulary::from_json(&v.to_json()).expect("re-parse");
        assert_eq!(v.digest(), again.digest());
        assert_eq!(v.to_json(), again.to_json());
    }
}

pub fn checkpoint(data: &[u8]) {
    if let Ok(c) = Checkpoint::<f64>::from_bytes(data) {
        let bytes = c.to_bytes();
        let again = Checkpoint::<f64>::from_bytes(&bytes).expect("re-parse");
        assert_eq!(again.to_bytes(), bytes);
    }
    let _ = Checkpoint::<f32>::from_bytes(data);
}

pub fn run_config(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(c) = RunConfig::from_json(text) {
        let again = RunConfig::from_json(&c.to_value().to_string()).expect("re-parse");
        assert_eq!(c, again);
    }
}

pub fn task_line(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(ex) = parse_task_line(text) {
        let again = parse_task_line(&serde_json::to_string(&ex).unwrap()).expect("re-parse");
        assert_eq!(ex, again);
    }
}

pub fn wiki(data: &[u8]) {
    let text = String::from_utf8_lossy(data);
    let doc = wikitext::convert("fuzz", &text);
    parse_document_line(&serde_json::to_string(&doc).unwrap()).expect("converted document is valid");
}
