//! Word and character vocabularies.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::doctree::QASample;

pub const NULL_WORD: u32 = 0;
pub const UNK_WORD: u32 = 1;
pub const UNK_CHAR: u32 = 0;
/// Characters read per token by the character CNN.
pub const MAX_WORD_CHARS: usize = 16;
/// Stand-in token for an absent answer prediction.
pub const NULL_TOKEN: &str = "<null>";

/// Word ids are assigned to lowercased tokens; characters keep their case.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "LexiconData", into = "LexiconData")]
pub struct Lexicon {
    words: Vec<String>,
    chars: Vec<char>,
    word_ix: HashMap<String, u32>,
    char_ix: HashMap<char, u32>,
}

#[derive(Serialize, Deserialize)]
struct LexiconData {
    words: Vec<String>,
    chars: Vec<char>,
}

impl From<LexiconData> for Lexicon {
    fn from(d: LexiconData) -> Self {
        Lexicon::from_parts(d.words, d.chars)
    }
}

impl From<Lexicon> for LexiconData {
    fn from(l: Lexicon) -> Self {
        LexiconData {
            words: l.words,
            chars: l.chars,
        }
    }
}

impl PartialEq for Lexicon {
    fn eq(&self, other: &Self) -> bool {
        self.words == other.words && self.chars == other.chars
    }
}

impl Lexicon {
    fn from_parts(words: Vec<String>, chars: Vec<char>) -> Self {
        let word_ix = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        let char_ix = chars
            .iter()
            .enumerate()
            .map(|(i, c)| (*c, i as u32))
            .collect();
        Self {
            words,
            chars,
            word_ix,
            char_ix,
        }
    }

    /// Vocabulary of the `max_words` most frequent lowercased tokens occurring
    /// at least `min_count` times; ties are ordered lexicographically. The
    /// character set is printable ASCII plus every character seen.
    pub fn build<'a>(
        tokens: impl IntoIterator<Item = &'a str>,
        max_words: usize,
        min_count: usize,
    ) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut seen_chars: Vec<char> = (32u8..127).map(char::from).collect();
        for t in tokens {
            *counts.entry(t.to_lowercase()).or_insert(0) += 1;
            seen_chars.extend(t.chars().filter(|c| !c.is_ascii()));
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count)
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut words = vec![NULL_TOKEN.to_string(), "<unk>".to_string()];
        words.extend(
            ranked
                .into_iter()
                .take(max_words)
                .map(|(w, _)| w)
                .filter(|w| w != NULL_TOKEN && w != "<unk>"),
        );
        seen_chars.sort_unstable();
        seen_chars.dedup();
        let mut chars = vec!['\u{0}'];
        chars.extend(seen_chars);
        Self::from_parts(words, chars)
    }

    /// Vocabulary over questions and node labels of a sample set.
    pub fn from_samples(samples: &[QASample], max_words: usize, min_count: usize) -> Self {
        let tokens = samples.iter().flat_map(|s| {
            s.question_tokens.iter().map(|t| &**t).chain(
                s.documents
                    .iter()
                    .flat_map(|d| d.nodes().iter().flat_map(|n| n.label.iter().map(|t| &**t))),
            )
        });
        Self::build(tokens, max_words, min_count)
    }

    pub fn n_words(&self) -> usize {
        self.words.len()
    }

    pub fn n_chars(&self) -> usize {
        self.chars.len()
    }

    pub fn word(&self, id: u32) -> &str {
        &self.words[id as usize]
    }

    pub fn word_id(&self, token: &str) -> u32 {
        if token == NULL_TOKEN {
            return NULL_WORD;
        }
        match self.word_ix.get(token) {
            Some(i) => *i,
            None => *self.word_ix.get(&token.to_lowercase()).unwrap_or(&UNK_WORD),
        }
    }

    pub fn char_ids(&self, token: &str) -> Vec<u32> {
        if token == NULL_TOKEN {
            return vec![UNK_CHAR];
        }
        let ids: Vec<u32> = token
            .chars()
            .take(MAX_WORD_CHARS)
            .map(|c| *self.char_ix.get(&c).unwrap_or(&UNK_CHAR))
            .collect();
        if ids.is_empty() {
            vec![UNK_CHAR]
        } else {
            ids
        }
    }
}
