use std::collections::{BTreeSet, HashMap};

use super::dictionary::EntityDictionary;
use super::document::{AnnotatedDocument, EntityAnnotation};
use super::tokenize::surface_name;

pub const DEFAULT_LINK_PROBABILITY_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, Default)]
struct PageName {
    entities: BTreeSet<String>,
    link_probability: Option<f64>,
}

/// Names hyperlinked on one source page, each with the set of entities it
/// points to there and its corpus-wide link probability.
#[derive(Debug, Clone, Default)]
pub struct PageDictionary {
    names: HashMap<String, PageName>,
    max_words: usize,
}

impl PageDictionary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Collects the page's own anchors; link probabilities come from `global`.
    /// Names missing from `global` stay ineligible.
    pub fn from_page(page: &AnnotatedDocument, global: &EntityDictionary) -> Self {
        let mut dict = Self::new();
        for a in &page.annotations {
            let name = surface_name(&page.words[a.start..a.end]);
            let p = global.link_probability(&name);
            dict.insert(&name, &a.title, p);
        }
        dict
    }

    /// Adds a name → entity mapping. `name` is normalized here.
    pub fn insert(&mut self, name: &str, title: &str, link_probability: Option<f64>) {
        let words: Vec<&str> = name.split_whitespace().collect();
        if words.is_empty() {
            return;
        }
        self.max_words = self.max_words.max(words.len());
        let entry = self.names.entry(surface_name(&words)).or_default();
        entry.entities.insert(title.to_string());
        if link_probability.is_some() {
            entry.link_probability = link_probability;
        }
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// The single referent of `name` if it is unambiguous on this page and
    /// its link probability reaches `threshold`.
    pub fn eligible(&self, name: &str, threshold: f64) -> Option<&str> {
        let entry = self.names.get(name)?;
        if entry.entities.len() != 1 {
            return None;
        }
        match entry.link_probability {
            Some(p) if p >= threshold => entry.entities.iter().next().map(String::as_str),
            _ => None,
        }
    }

    pub fn max_words(&self) -> usize {
        self.max_words
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Annotations {
    pub question: Vec<EntityAnnotation>,
    pub passage: Vec<EntityAnnotation>,
}

fn annotate_words<S: AsRef<str>>(words: &[S], page: &PageDictionary, threshold: f64) -> Vec<EntityAnnotation> {
    let mut matches: Vec<EntityAnnotation> = Vec::new();
    for start in 0..words.len() {
        for len in 1..=page.max_words().min(words.len() - start) {
            let name = surface_name(&words[start..start + len]);
            if let Some(title) = page.eligible(&name, threshold) {
                matches.push(EntityAnnotation::new(title, start, start + len));
            }
        }
    }
    matches.sort_by(|a, b| b.len().cmp(&a.len()).then(a.start.cmp(&b.start)));
    let mut taken = vec![false; words.len()];
    let mut accepted = Vec::new();
    for m in matches {
        if taken[m.start..m.end].iter().any(|&t| t) {
            continue;
        }
        taken[m.start..m.end].iter_mut().for_each(|t| *t = true);
        accepted.push(m);
    }
    accepted.sort_by_key(|a| a.start);
    accepted
}

/// String-matches page names in the question and passage. Matches must be
/// unambiguous on the page and pass the link-probability threshold; overlaps
/// are resolved longest first, then leftmost.
pub fn annotate<S: AsRef<str>>(
    question_words: &[S],
    passage_words: &[S],
    page: &PageDictionary,
    threshold: f64,
) -> Annotations {
    Annotations {
        question: annotate_words(question_words, page, threshold),
        passage: annotate_words(passage_words, page, threshold),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<String> {
        s.split(' ').map(String::from).collect()
    }

    #[test]
    fn absent_name_not_annotated() {
        let page = PageDictionary::new();
        let out = annotate(&words("hello world"), &words("x"), &page, 0.01);
        assert!(out.question.is_empty() && out.passage.is_empty());
    }

    #[test]
    fn ambiguous_name_skipped() {
        let mut page = PageDictionary::new();
        page.insert("mercury", "Mercury_(planet)", Some(0.5));
        page.insert("mercury", "Mercury_(element)", Some(0.5));
        page.insert("venus", "Venus", Some(0.5));
        let out = annotate(&words("Mercury and Venus"), &words(""), &page, 0.01);
        assert_eq!(out.question, vec![EntityAnnotation::new("Venus", 2, 3)]);
    }

    #[test]
    fn longest_match_wins() {
        let mut page = PageDictionary::new();
        page.insert("new york", "New_York", Some(0.9));
        page.insert("york", "York", Some(0.9));
        let out = annotate(&words("q"), &words("in New York and York"), &page, 0.01);
        assert_eq!(out.passage, vec![EntityAnnotation::new("New_York", 1, 3), EntityAnnotation::new("York", 4, 5)]);
    }

    #[test]
    fn threshold_filters_rare_links() {
        let mut page = PageDictionary::new();
        page.insert("apple", "Apple_Inc", Some(0.005));
        page.insert("pear", "Pear", Some(0.01));
        page.insert("plum", "Plum", None);
        let out = annotate(&words("apple pear plum"), &words(""), &page, DEFAULT_LINK_PROBABILITY_THRESHOLD);
        assert_eq!(out.question, vec![EntityAnnotation::new("Pear", 1, 2)]);
    }

    #[test]
    fn page_dictionary_uses_global_probabilities() {
        let page_doc = AnnotatedDocument::new(
            "p",
            words("See New York here"),
            vec![EntityAnnotation::new("New_York", 1, 3)],
        )
        .unwrap();
        let mut global = EntityDictionary::new();
        global.insert("new york", "New_York", 5, 10);
        let page = PageDictionary::from_page(&page_doc, &global);
        assert_eq!(page.eligible("new york", 0.5), Some("New_York"));
        assert_eq!(page.eligible("new york", 0.6), None);
    }
}
