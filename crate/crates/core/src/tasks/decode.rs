use std::cmp::Ordering;

use super::example::Span;

pub const DEFAULT_MAX_SPAN_LEN: usize = 16;
pub const DEFAULT_MAX_ANSWER_LEN: usize = 30;

/// Every span of at most `max_span_len` words over `num_words` words,
/// ordered by start, then end.
pub fn ner_enumerate(num_words: usize, max_span_len: usize) -> Vec<Span> {
    let mut out = Vec::new();
    for start in 0..num_words {
        for end in start + 1..=(start + max_span_len).min(num_words) {
            out.push(Span::new(start, end));
        }
    }
    out
}

/// A candidate span with its best label (0 = non-entity) and that label's
/// logit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpanPrediction {
    pub span: Span,
    pub label: usize,
    pub logit: f64,
}

/// Greedy selection: drop non-entity spans, visit the rest by logit
/// (descending; ties: earlier start, then shorter), keep a span if it
/// overlaps nothing kept so far. Output is sorted by start.
pub fn ner_decode(preds: &[SpanPrediction]) -> Vec<SpanPrediction> {
    let mut order: Vec<&SpanPrediction> = preds.iter().filter(|p| p.label != 0).collect();
    order.sort_by(|a, b| {
        b.logit
            .partial_cmp(&a.logit)
            .unwrap_or(Ordering::Equal)
            .then(a.span.start.cmp(&b.span.start))
            .then(a.span.len().cmp(&b.span.len()))
    });
    let mut kept: Vec<SpanPrediction> = Vec::new();
    for p in order {
        if kept.iter().all(|k| !k.span.overlaps(&p.span)) {
            kept.push(*p);
        }
    }
    kept.sort_by_key(|p| (p.span.start, p.span.end));
    kept
}

/// Best answer `(s, e)` (inclusive) within `range` maximizing
/// `start[s] + end[e]` with `s ≤ e < s + max_len`. Ties go to the smallest
/// `s`, then the smallest `e`. `None` for an empty range.
pub fn extractive_decode(
    start: &[f64],
    end: &[f64],
    range: std::ops::Range<usize>,
    max_len: usize,
) -> Option<(usize, usize)> {
    let mut best: Option<(f64, usize, usize)> = None;
    for s in range.clone() {
        for e in s..range.end.min(s + max_len) {
            let score = start[s] + end[e];
            if best.is_none_or(|(b, _, _)| score > b) {
                best = Some((score, s, e));
            }
        }
    }
    best.map(|(_, s, e)| (s, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_counts() {
        assert_eq!(ner_enumerate(1, 16).len(), 1);
        assert_eq!(ner_enumerate(5, 16).len(), 15);
        assert_eq!(ner_enumerate(0, 16).len(), 0);
    }

    #[test]
    fn overlapping_spans_keep_higher_logit() {
        let p = |s, e, l| SpanPrediction { span: Span::new(s, e), label: 1, logit: l };
        let out = ner_decode(&[p(0, 2, 2.0), p(1, 3, 3.0)]);
        assert_eq!(out, vec![p(1, 3, 3.0)]);
        let none = SpanPrediction { label: 0, ..p(0, 1, 9.0) };
        assert!(ner_decode(&[none]).is_empty());
    }

    #[test]
    fn decode_respects_length_and_order() {
        let start = [0.0, 5.0, 0.0, 0.0];
        let end = [9.0, 0.0, 0.0, 1.0];
        assert_eq!(extractive_decode(&start, &end, 0..4, 30), Some((0, 0)));
        assert_eq!(extractive_decode(&start, &end, 1..4, 30), Some((1, 3)));
        assert_eq!(extractive_decode(&start, &end, 1..4, 2), Some((1, 1)));
        assert_eq!(extractive_decode(&start, &end, 2..2, 30), None);
    }
}
