use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::TaskError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Typing,
    Relation,
    Ner,
    Cloze,
    Extractive,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [Self::Typing, Self::Relation, Self::Ner, Self::Cloze, Self::Extractive];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Typing => "typing",
            Self::Relation => "relation",
            Self::Ner => "ner",
            Self::Cloze => "cloze",
            Self::Extractive => "extractive",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = TaskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| TaskError::Config(format!("unknown task `{s}` (expected typing, relation, ner, cloze or extractive)")))
    }
}

/// Half-open word range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn positions(&self, offset: usize) -> Vec<usize> {
        (self.start + offset..self.end + offset).collect()
    }

    fn check(&self, len: usize, what: &str) -> Result<(), String> {
        if self.is_empty() || self.end > len {
            return Err(format!("{what} [{}, {}) is not a non-empty range within {len} words", self.start, self.end));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypedSpan {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

impl TypedSpan {
    pub fn span(&self) -> Span {
        Span::new(self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TitledSpan {
    pub start: usize,
    pub end: usize,
    pub title: String,
}

impl TitledSpan {
    pub fn span(&self) -> Span {
        Span::new(self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypingExample {
    pub id: String,
    pub words: Vec<String>,
    pub target: Span,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationExample {
    pub id: String,
    pub words: Vec<String>,
    pub head: Span,
    pub tail: Span,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NerExample {
    pub id: String,
    pub words: Vec<String>,
    pub spans: Vec<TypedSpan>,
}

/// A question with one missing entity (at word `placeholder`) and the
/// annotated entity spans of the passage; the answer is a title.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClozeExample {
    pub id: String,
    pub question: Vec<String>,
    pub placeholder: usize,
    pub passage: Vec<String>,
    pub candidates: Vec<TitledSpan>,
    pub answer: String,
}

/// Span-extraction question; `entities` are passage annotations fed to the
/// model as real entities, `answer` is a passage span.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractiveExample {
    pub id: String,
    pub question: Vec<String>,
    pub passage: Vec<String>,
    #[serde(default)]
    pub entities: Vec<TitledSpan>,
    pub answer: Span,
}

/// One line of a task dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum TaskExample {
    Typing(TypingExample),
    Relation(RelationExample),
    Ner(NerExample),
    Cloze(ClozeExample),
    Extractive(ExtractiveExample),
}

fn check_words(words: &[String], what: &str) -> Result<(), String> {
    if words.is_empty() {
        return Err(format!("{what} has no words"));
    }
    Ok(())
}

impl TaskExample {
    pub fn kind(&self) -> TaskKind {
        match self {
            Self::Typing(_) => TaskKind::Typing,
            Self::Relation(_) => TaskKind::Relation,
            Self::Ner(_) => TaskKind::Ner,
            Self::Cloze(_) => TaskKind::Cloze,
            Self::Extractive(_) => TaskKind::Extractive,
        }
    }

    pub fn id(&self) -> &str {
        match self {
            Self::Typing(x) => &x.id,
            Self::Relation(x) => &x.id,
            Self::Ner(x) => &x.id,
            Self::Cloze(x) => &x.id,
            Self::Extractive(x) => &x.id,
        }
    }

    /// Structural checks that do not depend on a label space.
    pub fn validate(&self) -> Result<(), TaskError> {
        let res = match self {
            Self::Typing(x) => check_words(&x.words, "sentence").and_then(|_| x.target.check(x.words.len(), "target")),
            Self::Relation(x) => check_words(&x.words, "sentence")
                .and_then(|_| x.head.check(x.words.len(), "head"))
                .and_then(|_| x.tail.check(x.words.len(), "tail")),
            Self::Ner(x) => check_words(&x.words, "sentence").and_then(|_| {
                let mut sorted: Vec<Span> = x.spans.iter().map(TypedSpan::span).collect();
                for s in &sorted {
                    s.check(x.words.len(), "entity span")?;
                }
                sorted.sort();
                match sorted.windows(2).find(|w| w[0].overlaps(&w[1])) {
                    Some(w) => Err(format!("gold spans {:?} and {:?} overlap", w[0], w[1])),
                    None => Ok(()),
                }
            }),
            Self::Cloze(x) => check_words(&x.question, "question")
                .and_then(|_| check_words(&x.passage, "passage"))
                .and_then(|_| {
                    if x.placeholder >= x.question.len() {
                        return Err(format!("placeholder {} beyond {} question words", x.placeholder, x.question.len()));
                    }
                    if x.candidates.is_empty() {
                        return Err("no passage entities".into());
                    }
                    for c in &x.candidates {
                        c.span().check(x.passage.len(), "candidate")?;
                    }
                    if !x.candidates.iter().any(|c| c.title == x.answer) {
                        return Err(format!("answer `{}` is not among the passage entities", x.answer));
                    }
                    Ok(())
                }),
            Self::Extractive(x) => check_words(&x.question, "question")
                .and_then(|_| check_words(&x.passage, "passage"))
                .and_then(|_| {
                    for e in &x.entities {
                        e.span().check(x.passage.len(), "entity span")?;
                    }
                    x.answer.check(x.passage.len(), "answer")
                }),
        };
        res.map_err(|m| TaskError::Validation(format!("example `{}`: {m}", self.id())))
    }
}

pub fn parse_task_line(line: &str) -> Result<TaskExample, TaskError> {
    let ex: TaskExample = serde_json::from_str(line).map_err(|e| TaskError::Validation(e.to_string()))?;
    ex.validate()?;
    Ok(ex)
}

/// Reads a JSON-lines task file; blank lines are skipped and errors carry
/// the 1-based line number.
pub fn read_task_file(path: &Path) -> Result<Vec<TaskExample>, TaskError> {
    let file = std::fs::File::open(path).map_err(|e| TaskError::Io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| TaskError::Io(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let ex = parse_task_line(&line)
            .map_err(|e| TaskError::Validation(format!("{}:{}: {}", path.display(), i + 1, e.message())))?;
        out.push(ex);
    }
    Ok(out)
}

pub fn to_jsonl<S: Serialize>(items: &[S]) -> String {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(it).expect("serializable"));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tagged_round_trip_and_unknown_fields() {
        let ex = TaskExample::Typing(TypingExample {
            id: "t1".into(),
            words: vec!["a".into(), "b".into()],
            target: Span::new(0, 1),
            labels: vec!["x".into()],
        });
        let line = serde_json::to_string(&ex).unwrap();
        assert!(line.starts_with(r#"{"task":"typing""#));
        assert_eq!(parse_task_line(&line).unwrap(), ex);
        let extra = line.replacen(r#""id""#, r#""bogus":1,"id""#, 1);
        assert!(parse_task_line(&extra).is_err());
        let bad = line.replace(r#""end":1"#, r#""end":5"#);
        assert!(parse_task_line(&bad).unwrap_err().message().contains("target"));
    }

    #[test]
    fn ner_overlap_is_rejected() {
        let ex = TaskExample::Ner(NerExample {
            id: "n".into(),
            words: vec!["a".into(); 4],
            spans: vec![
                TypedSpan { start: 0, end: 2, label: "x".into() },
                TypedSpan { start: 1, end: 3, label: "y".into() },
            ],
        });
        assert!(ex.validate().is_err());
    }
}
