use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

/// Micro-averaged precision/recall/F1, plus exact match and token F1 for the
/// reading-comprehension tasks. When there is nothing to predict and nothing
/// was predicted, every score is 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub exact_match: Option<f64>,
}

fn prf(tp: usize, predicted: usize, gold: usize) -> Scores {
    let ratio = |a: usize, b: usize| if b == 0 { if a == 0 { 1.0 } else { 0.0 } } else { a as f64 / b as f64 };
    let (p, r) = if predicted == 0 && gold == 0 { (1.0, 1.0) } else { (ratio(tp, predicted), ratio(tp, gold)) };
    let p = if predicted == 0 && gold > 0 { 0.0 } else { p };
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    Scores { precision: p, recall: r, f1, exact_match: None }
}

/// Micro P/R/F1 over per-example label sets.
pub fn set_prf<T: Ord + Clone>(predicted: &[BTreeSet<T>], gold: &[BTreeSet<T>]) -> Scores {
    assert_eq!(predicted.len(), gold.len(), "predictions and golds must align");
    let tp = predicted.iter().zip(gold).map(|(p, g)| p.intersection(g).count()).sum();
    let np = predicted.iter().map(BTreeSet::len).sum();
    let ng = gold.iter().map(BTreeSet::len).sum();
    prf(tp, np, ng)
}

/// Micro P/R/F1 for single-label classification where `negative` is not
/// counted as a prediction or a gold instance.
pub fn relation_prf(predicted: &[String], gold: &[String], negative: &str) -> Scores {
    assert_eq!(predicted.len(), gold.len(), "predictions and golds must align");
    let tp = predicted.iter().zip(gold).filter(|(p, g)| p == g && *g != negative).count();
    let np = predicted.iter().filter(|p| *p != negative).count();
    let ng = gold.iter().filter(|g| *g != negative).count();
    prf(tp, np, ng)
}

fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| c.is_whitespace() || c == '_')
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Bag-of-tokens F1 between two answer strings (case-insensitive;
/// underscores count as spaces).
pub fn token_f1(predicted: &str, gold: &str) -> f64 {
    let (p, g) = (tokens(predicted), tokens(gold));
    if p.is_empty() || g.is_empty() {
        return if p.is_empty() && g.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &g {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0;
    for t in &p {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let pr = common as f64 / p.len() as f64;
    let rc = common as f64 / g.len() as f64;
    2.0 * pr * rc / (pr + rc)
}

pub fn exact_match(predicted: &str, gold: &str) -> bool {
    tokens(predicted) == tokens(gold)
}

/// Mean exact match and token F1; `f1` holds the token F1 and
/// precision/recall mirror it.
pub fn answer_scores(predicted: &[String], gold: &[String]) -> Scores {
    assert_eq!(predicted.len(), gold.len(), "predictions and golds must align");
    if predicted.is_empty() {
        return Scores { precision: 1.0, recall: 1.0, f1: 1.0, exact_match: Some(1.0) };
    }
    let n = predicted.len() as f64;
    let em = predicted.iter().zip(gold).filter(|(p, g)| exact_match(p, g)).count() as f64 / n;
    let f1 = predicted.iter().zip(gold).map(|(p, g)| token_f1(p, g)).sum::<f64>() / n;
    Scores { precision: f1, recall: f1, f1, exact_match: Some(em) }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn typing_partial_recall() {
        let s = set_prf(&[set(&["A"])], &[set(&["A", "B"])]);
        assert_eq!(s.precision, 1.0);
        assert_eq!(s.recall, 0.5);
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn token_f1_new_york() {
        assert!((token_f1("New York", "New York City") - 0.8).abs() < 1e-12);
        assert!(!exact_match("New York", "New York City"));
        assert!(exact_match("New_York", "new york"));
    }

    #[test]
    fn empty_conventions() {
        assert_eq!(set_prf::<String>(&[set(&[])], &[set(&[])]).f1, 1.0);
        let s = set_prf(&[set(&[])], &[set(&["A"])]);
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
        let s = relation_prf(&["none".into()], &["none".into()], "none");
        assert_eq!(s.f1, 1.0);
        let s = relation_prf(&["r".into()], &["none".into()], "none");
        assert_eq!((s.precision, s.f1), (0.0, 0.0));
    }
}
