//! Shared tokenizer and the normalization rules used for answer matching and scoring.
//!
//! Every module that counts tokens (observation caps, tf-idf, extractors,
//! token-consumption statistics) goes through [`tokenize`] so the counts agree.

/// Splits on whitespace, then separates every punctuation character into its own token.
///
/// Alphanumeric runs stay together: `"Phuket's capital."` becomes
/// `["Phuket", "'", "s", "capital", "."]`.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut word = String::new();
        for ch in chunk.chars() {
            if ch.is_alphanumeric() {
                word.push(ch);
            } else {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(ch.to_string());
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

/// Lowercases a token and trims punctuation from both ends. Returns `None` when nothing is left.
pub fn normalize_token(token: &str) -> Option<String> {
    let trimmed = token.trim_matches(|c: char| !c.is_alphanumeric());
    if trimmed.is_empty() {
        None
    } else {
        Some(trimmed.to_lowercase())
    }
}

/// Normalized form of a token sequence, used for answer matching and tf-idf terms.
pub fn normalize_tokens<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    tokens
        .iter()
        .filter_map(|t| normalize_token(t.as_ref()))
        .collect()
}

/// Tokenizes and normalizes free text in one step.
pub fn normalized_terms(text: &str) -> Vec<String> {
    normalize_tokens(&tokenize(text))
}

/// Position of the first contiguous occurrence of `needle` inside `haystack`.
pub fn find_subsequence<T: PartialEq>(haystack: &[T], needle: &[T]) -> Option<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return None;
    }
    haystack.windows(needle.len()).position(|w| w == needle)
}

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Answer normalization for exact-match and F1 scoring: lowercase, drop punctuation,
/// drop articles, collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let no_punct: String = lowered
        .chars()
        .map(|c| {
            if c.is_alphanumeric() || c.is_whitespace() {
                c
            } else {
                ' '
            }
        })
        .collect();
    no_punct
        .split_whitespace()
        .filter(|w| !ARTICLES.contains(w))
        .collect::<Vec<_>>()
        .join(" ")
}
