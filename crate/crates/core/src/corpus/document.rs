use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CorpusError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntityAnnotation {
    pub title: String,
    pub start: usize,
    /// Exclusive.
    pub end: usize,
}

impl EntityAnnotation {
    pub fn new(title: impl Into<String>, start: usize, end: usize) -> Self {
        Self { title: title.into(), start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &Self) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// One corpus document: words plus hyperlink-style entity annotations,
/// sorted by start and pairwise non-overlapping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatedDocument {
    pub id: String,
    pub words: Vec<String>,
    #[serde(default, rename = "entities")]
    pub annotations: Vec<EntityAnnotation>,
}

impl AnnotatedDocument {
    /// Validates spans, sorts annotations by start and rejects overlaps.
    pub fn new(id: impl Into<String>, words: Vec<String>, annotations: Vec<EntityAnnotation>) -> Result<Self, CorpusError> {
        let mut doc = Self { id: id.into(), words, annotations };
        doc.validate()?;
        Ok(doc)
    }

    fn validate(&mut self) -> Result<(), CorpusError> {
        for a in &self.annotations {
            if a.start >= a.end || a.end > self.words.len() {
                return Err(CorpusError::SpanOutOfRange {
                    doc_id: self.id.clone(),
                    title: a.title.clone(),
                    start: a.start,
                    end: a.end,
                    len: self.words.len(),
                });
            }
        }
        self.annotations.sort_by_key(|a| (a.start, a.end));
        for pair in self.annotations.windows(2) {
            if pair[0].overlaps(&pair[1]) {
                return Err(CorpusError::Overlap {
                    doc_id: self.id.clone(),
                    a_start: pair[0].start,
                    a_end: pair[0].end,
                    b_start: pair[1].start,
                    b_end: pair[1].end,
                });
            }
        }
        Ok(())
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("documents serialize")
    }
}

/// Parses and validates one JSON-lines record.
pub fn parse_document_line(line: &str) -> Result<AnnotatedDocument, CorpusError> {
    let mut doc: AnnotatedDocument =
        serde_json::from_str(line).map_err(|e| CorpusError::Malformed { line: 0, message: e.to_string() })?;
    doc.validate()?;
    Ok(doc)
}

/// Streams documents from a JSON-lines reader. Blank lines are skipped;
/// every error carries its 1-based line number.
pub fn read_documents<R: BufRead>(reader: R) -> impl Iterator<Item = Result<AnnotatedDocument, CorpusError>> {
    reader.lines().enumerate().filter_map(|(i, line)| {
        let line_no = i + 1;
        let line = match line {
            Ok(l) => l,
            Err(e) => return Some(Err(CorpusError::Malformed { line: line_no, message: e.to_string() })),
        };
        if line.trim().is_empty() {
            return None;
        }
        Some(parse_document_line(&line).map_err(|e| match e {
            CorpusError::Malformed { message, .. } => CorpusError::Malformed { line: line_no, message },
            other => other.at_line(line_no),
        }))
    })
}

/// Opens a corpus file and streams its documents.
pub fn ingest(path: &Path) -> Result<impl Iterator<Item = Result<AnnotatedDocument, CorpusError>>, CorpusError> {
    let file = File::open(path)?;
    Ok(read_documents(BufReader::new(file)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("w{i}")).collect()
    }

    #[test]
    fn annotations_are_sorted() {
        let doc = AnnotatedDocument::new(
            "d",
            words(6),
            vec![EntityAnnotation::new("B", 3, 5), EntityAnnotation::new("A", 0, 1)],
        )
        .unwrap();
        assert_eq!(doc.annotations[0].title, "A");
    }

    #[test]
    fn overlap_rejected_with_document_id() {
        let err = AnnotatedDocument::new(
            "doc-7",
            words(6),
            vec![EntityAnnotation::new("A", 0, 3), EntityAnnotation::new("B", 2, 4)],
        )
        .unwrap_err();
        assert!(err.to_string().contains("doc-7"), "{err}");
    }

    #[test]
    fn out_of_range_end_names_document() {
        let err = parse_document_line(r#"{"id":"x9","words":["a","b"],"entities":[{"title":"T","start":1,"end":3}]}"#)
            .unwrap_err();
        assert!(matches!(err, CorpusError::SpanOutOfRange { ref doc_id, .. } if doc_id == "x9"));
    }

    #[test]
    fn empty_span_rejected() {
        assert!(parse_document_line(r#"{"id":"e","words":["a"],"entities":[{"title":"T","start":0,"end":0}]}"#).is_err());
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let input = "{\"id\":\"a\",\"words\":[]}\n\nnot json\n";
        let results: Vec<_> = read_documents(input.as_bytes()).collect();
        assert_eq!(results.len(), 2);
        assert!(results[0].is_ok());
        match &results[1] {
            Err(CorpusError::Malformed { line, .. }) => assert_eq!(*line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_input_is_empty_stream() {
        assert_eq!(read_documents("".as_bytes()).count(), 0);
    }
}
