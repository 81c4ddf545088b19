/// Lowercase normalization applied before any vocabulary or dictionary lookup.
pub fn normalize_word(word: &str) -> String {
    word.to_lowercase()
}

/// Splits on whitespace and isolates every punctuation character as its own
/// token; output is lowercased.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut cur = String::new();
        for ch in chunk.chars() {
            if ch.is_alphanumeric() || ch == '_' {
                cur.extend(ch.to_lowercase());
            } else {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(ch.to_lowercase().collect());
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

/// Canonical surface form of a word span: normalized words joined by one space.
pub fn surface_name<S: AsRef<str>>(words: &[S]) -> String {
    let mut s = String::new();
    for (i, w) in words.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        s.push_str(&normalize_word(w.as_ref()));
    }
    s
}
