use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};

use super::document::AnnotatedDocument;
use super::tokenize::surface_name;
use super::CorpusError;

/// Counts for one surface name.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NameStats {
    /// entity title → number of hyperlinks with this anchor text pointing at it.
    pub links: BTreeMap<String, u64>,
    /// Linked plus unlinked non-overlapping occurrences of the name.
    pub total_count: u64,
}

impl NameStats {
    pub fn link_count(&self) -> u64 {
        self.links.values().sum()
    }

    pub fn link_probability(&self) -> f64 {
        if self.total_count == 0 {
            0.0
        } else {
            self.link_count() as f64 / self.total_count as f64
        }
    }
}

/// Surface name → linked entities and occurrence counts. Names are stored in
/// normalized form (lowercase words joined by single spaces).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntityDictionary {
    names: BTreeMap<String, NameStats>,
}

const HEADER: &str = "name\tentity_title\tlink_count\ttotal_count";

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            _ => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => return Err(format!("unknown escape `\\{other}`")),
            None => return Err("dangling backslash".into()),
        }
    }
    Ok(out)
}

impl EntityDictionary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&NameStats> {
        self.names.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &NameStats)> {
        self.names.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Link probability of a normalized name; `None` if the name was never seen.
    pub fn link_probability(&self, name: &str) -> Option<f64> {
        self.names.get(name).map(NameStats::link_probability)
    }

    /// Inserts or overwrites one (name, entity) row. `total_count` is per name.
    pub fn insert(&mut self, name: &str, title: &str, link_count: u64, total_count: u64) {
        let stats = self.names.entry(name.to_string()).or_default();
        stats.links.insert(title.to_string(), link_count);
        stats.total_count = total_count;
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{HEADER}")?;
        for (name, stats) in &self.names {
            for (title, count) in &stats.links {
                writeln!(w, "{}\t{}\t{}\t{}", escape(name), escape(title), count, stats.total_count)?;
            }
        }
        Ok(())
    }

    pub fn to_tsv(&self) -> String {
        let mut buf = Vec::new();
        self.write_tsv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("utf-8 input")
    }

    /// Parses the TSV format written by [`write_tsv`](Self::write_tsv). The
    /// header line is optional; errors carry 1-based line numbers.
    pub fn read_tsv<R: BufRead>(reader: R) -> Result<Self, CorpusError> {
        let mut dict = Self::new();
        let mut seen: HashSet<(String, String)> = HashSet::new();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| CorpusError::Malformed { line: line_no, message: e.to_string() })?;
            let bad = |message: String| CorpusError::Malformed { line: line_no, message };
            if line.is_empty() || (line_no == 1 && line == HEADER) {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(bad(format!("expected 4 tab-separated columns, found {}", cols.len())));
            }
            let name = unescape(cols[0]).map_err(bad)?;
            let title = unescape(cols[1]).map_err(bad)?;
            let link: u64 = cols[2].parse().map_err(|e| bad(format!("link_count: {e}")))?;
            let total: u64 = cols[3].parse().map_err(|e| bad(format!("total_count: {e}")))?;
            if !seen.insert((name.clone(), title.clone())) {
                return Err(bad(format!("duplicate row for `{name}` → `{title}`")));
            }
            if let Some(prev) = dict.names.get(&name) {
                if prev.total_count != total {
                    return Err(bad(format!(
                        "total_count {total} for `{name}` disagrees with earlier {}",
                        prev.total_count
                    )));
                }
            }
            dict.insert(&name, &title, link, total);
            let stats = &dict.names[&name];
            if stats.link_count() > stats.total_count {
                return Err(bad(format!("link counts for `{name}` exceed total_count {total}")));
            }
        }
        Ok(dict)
    }
}

/// Counts hyperlink anchors per (name, entity) and, per name, every
/// non-overlapping occurrence in running text. An occurrence inside an
/// annotated span is counted only as that annotation's own name.
pub fn build_dictionary<'a, I>(docs: I) -> EntityDictionary
where
    I: IntoIterator<Item = &'a AnnotatedDocument> + Clone,
{
    let mut names: BTreeMap<String, NameStats> = BTreeMap::new();
    for doc in docs.clone() {
        for a in &doc.annotations {
            let name = surface_name(&doc.words[a.start..a.end]);
            let stats = names.entry(name).or_default();
            *stats.links.entry(a.title.clone()).or_default() += 1;
            stats.total_count += 1;
        }
    }
    let max_len = names.keys().map(|n| n.split(' ').count()).max().unwrap_or(0);
    if max_len == 0 {
        return EntityDictionary { names };
    }

    let mut plain: HashMap<&str, u64> = HashMap::new();
    for doc in docs {
        let normalized: Vec<String> = doc.words.iter().map(|w| w.to_lowercase()).collect();
        let mut segment_start = 0;
        let mut boundaries: Vec<(usize, usize)> = Vec::new();
        for a in &doc.annotations {
            boundaries.push((segment_start, a.start));
            segment_start = a.end;
        }
        boundaries.push((segment_start, normalized.len()));
        for (lo, hi) in boundaries {
            let mut last_end: HashMap<&str, usize> = HashMap::new();
            for i in lo..hi {
                let mut candidate = String::new();
                for len in 1..=max_len.min(hi - i) {
                    if len > 1 {
                        candidate.push(' ');
                    }
                    candidate.push_str(&normalized[i + len - 1]);
                    if let Some((key, _)) = names.get_key_value(candidate.as_str()) {
                        let end = last_end.entry(key.as_str()).or_insert(0);
                        if i >= *end {
                            *end = i + len;
                            *plain.entry(key.as_str()).or_default() += 1;
                        }
                    }
                }
            }
        }
    }
    let plain: Vec<(String, u64)> = plain.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    for (name, count) in plain {
        names.get_mut(&name).expect("name from the same map").total_count += count;
    }
    EntityDictionary { names }
}
