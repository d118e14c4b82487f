//! Message normalisation and function-word filtering.

use std::collections::HashSet;
use std::path::Path;

const DEFAULT_STOPLIST: &str = include_str!("../../data/stoplist.txt");

/// Closed-class words removed before lexical comparison.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stoplist {
    words: HashSet<String>,
}

impl Stoplist {
    /// Parse one word per line; `#` starts a comment line.
    pub fn parse(text: &str) -> Self {
        let words = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_lowercase)
            .collect();
        Self { words }
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            words: words.into_iter().map(|w| w.as_ref().to_lowercase()).collect(),
        }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

impl Default for Stoplist {
    fn default() -> Self {
        Self::parse(DEFAULT_STOPLIST)
    }
}

/// A message reduced to its lowercase content tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilteredMessage {
    pub original: String,
    pub tokens: Vec<String>,
}

/// Lowercase words of `message`. Apostrophes are deleted ("amazon's" becomes
/// "amazons"); any other non-alphanumeric character separates words.
pub fn normalize_words(message: &str) -> Vec<String> {
    let mut cleaned = String::with_capacity(message.len());
    for c in message.chars() {
        if c == '\'' || c == '\u{2019}' {
            continue;
        }
        if c.is_alphanumeric() {
            cleaned.extend(c.to_lowercase());
        } else {
            cleaned.push(' ');
        }
    }
    cleaned.split_whitespace().map(str::to_string).collect()
}

pub fn filter_tokens(message: &str, stoplist: &Stoplist) -> FilteredMessage {
    FilteredMessage {
        original: message.to_string(),
        tokens: normalize_words(message)
            .into_iter()
            .filter(|w| !stoplist.contains(w))
            .collect(),
    }
}

/// Counts tokens for message-length reporting.
pub trait LengthTokenizer: Send + Sync {
    fn name(&self) -> &str;
    fn count(&self, message: &str) -> usize;
}

/// Unfiltered whitespace token count.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl LengthTokenizer for WhitespaceTokenizer {
    fn name(&self) -> &str {
        "whitespace"
    }

    fn count(&self, message: &str) -> usize {
        message.split_whitespace().count()
    }
}
