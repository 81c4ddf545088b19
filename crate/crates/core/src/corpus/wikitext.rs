//! Converts `[[Title|anchor]]` link markup into annotated documents.

use super::document::{AnnotatedDocument, EntityAnnotation};
use super::tokenize::tokenize;

/// Canonical page title: trimmed, underscores read as spaces, runs of
/// whitespace collapsed, first letter uppercased.
pub fn normalize_title(raw: &str) -> String {
    let spaced = raw.replace('_', " ");
    let collapsed: Vec<&str> = spaced.split_whitespace().collect();
    let joined = collapsed.join(" ");
    let mut chars = joined.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Tokenizes `text`, turning each well-formed link into an annotation over
/// its anchor tokens. Malformed markup (unclosed, nested, empty title) is
/// kept as plain text.
pub fn convert(id: &str, text: &str) -> AnnotatedDocument {
    let mut words: Vec<String> = Vec::new();
    let mut annotations = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("[[") {
        let (before, after_open) = rest.split_at(open);
        words.extend(tokenize(before));
        let inner_start = &after_open[2..];
        let link = inner_start.find("]]").and_then(|close| {
            let inner = &inner_start[..close];
            if inner.contains("[[") {
                return None;
            }
            let (target, anchor) = match inner.split_once('|') {
                Some((t, a)) => (t, a),
                None => (inner, inner),
            };
            let title = normalize_title(target);
            if title.is_empty() {
                return None;
            }
            Some((title, anchor, close))
        });
        match link {
            Some((title, anchor, close)) => {
                let tokens = tokenize(anchor);
                if !tokens.is_empty() {
                    annotations.push(EntityAnnotation::new(title, words.len(), words.len() + tokens.len()));
                }
                words.extend(tokens);
                rest = &inner_start[close + 2..];
            }
            None => {
                words.extend(tokenize("[["));
                rest = inner_start;
            }
        }
    }
    words.extend(tokenize(rest));
    AnnotatedDocument::new(id, words, annotations).expect("converter emits sorted, disjoint, in-range spans")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn links_become_annotations() {
        let d = convert("p", "He moved to [[New_York_City|New York]] in [[1990]].");
        assert_eq!(d.words, ["he", "moved", "to", "new", "york", "in", "1990", "."]);
        assert_eq!(
            d.annotations,
            vec![EntityAnnotation::new("New York City", 3, 5), EntityAnnotation::new("1990", 6, 7)]
        );
    }

    #[test]
    fn malformed_markup_is_plain_text() {
        let d = convert("p", "a [[ b [[C]] d [[|x]] [[open");
        assert_eq!(d.annotations, vec![EntityAnnotation::new("C", 4, 5)]);
        assert!(d.words.iter().filter(|w| *w == "[").count() >= 4);
    }

    #[test]
    fn empty_anchor_yields_no_annotation() {
        let d = convert("p", "x [[Target| ]] y");
        assert!(d.annotations.is_empty());
        assert_eq!(d.words, ["x", "y"]);
    }

    #[test]
    fn title_normalization() {
        assert_eq!(normalize_title("  new_york  city "), "New york city");
        assert_eq!(normalize_title("___"), "");
    }
}
