//! Extracting answers and messages from free-form agent replies.

use crate::model::Selection;

/// Word budget the speaker instructions ask for.
pub const MAX_WORDS_HINT: usize = 20;

/// Position of the first sentence terminator, or the end of the text.
fn first_sentence_end(text: &str) -> usize {
    text.find(['.', '!', '?', '\n']).unwrap_or(text.len())
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Word-bounded occurrences of `needle` in `haystack`, as byte offsets.
fn find_bounded(haystack: &str, needle: &str, case_sensitive: bool) -> Vec<usize> {
    let (hay, pat) = if case_sensitive {
        (haystack.to_string(), needle.to_string())
    } else {
        (haystack.to_lowercase(), needle.to_lowercase())
    };
    // lowercasing may shift byte offsets outside ASCII; fall back to no match
    if hay.len() != haystack.len() || pat.is_empty() {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(pos) = hay[from..].find(&pat) {
        let start = from + pos;
        let end = start + pat.len();
        let before_ok = hay[..start].chars().next_back().is_none_or(|c| !is_word_char(c));
        let after_ok = hay[end..].chars().next().is_none_or(|c| !is_word_char(c));
        if before_ok && after_ok {
            out.push(start);
        }
        from = start + hay[start..].chars().next().map_or(1, char::len_utf8);
    }
    out
}

/// All (offset, label) matches of one pattern family, sorted by offset.
fn matches<F>(text: &str, labels: &[String], pattern: F) -> Vec<(usize, usize)>
where
    F: Fn(&str) -> (String, bool),
{
    let mut found: Vec<(usize, usize)> = labels
        .iter()
        .enumerate()
        .flat_map(|(k, label)| {
            let (pat, cs) = pattern(label);
            find_bounded(text, &pat, cs).into_iter().map(move |off| (off, k))
        })
        .collect();
    found.sort();
    found
}

fn pick(found: &[(usize, usize)], sentence_end: usize, labels: &[String]) -> Option<Selection> {
    let first = found.first()?;
    let mut in_first: Vec<usize> = found.iter().filter(|(o, _)| *o < sentence_end).map(|(_, k)| *k).collect();
    in_first.sort();
    in_first.dedup();
    if in_first.len() > 1 {
        return Some(Selection::Invalid);
    }
    Some(Selection::Label(labels[first.1].clone()))
}

/// Map a listener reply onto one of `valid_labels`.
///
/// "Image X" mentions are looked for first (case-insensitive); failing that,
/// a standalone label. Single-letter labels only match in upper case so that
/// the article "a" does not count. The earliest match wins unless the first
/// sentence names two different labels.
pub fn parse_listener_choice(text: &str, valid_labels: &[String]) -> Selection {
    if valid_labels.is_empty() {
        return Selection::Invalid;
    }
    let end = first_sentence_end(text);
    let explicit = matches(text, valid_labels, |l| (format!("image {l}"), false));
    if let Some(sel) = pick(&explicit, end, valid_labels) {
        return sel;
    }
    let bare = matches(text, valid_labels, |l| {
        let single_letter = l.chars().count() == 1;
        (l.to_string(), single_letter)
    });
    pick(&bare, end, valid_labels).unwrap_or(Selection::Invalid)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpeakerMessage {
    pub text: String,
    pub words: usize,
    /// More words than the instructions allow. Recorded, not enforced.
    pub over_hint: bool,
}

const QUOTES: &[char] = &['"', '\'', '`', '\u{201c}', '\u{201d}', '\u{2018}', '\u{2019}'];

/// Strip a leading "Message:" and surrounding whitespace and quotes.
pub fn parse_speaker_message(text: &str, max_words_hint: usize) -> Result<SpeakerMessage, String> {
    let mut s = text.trim();
    if s.get(..8).is_some_and(|h| h.eq_ignore_ascii_case("message:")) {
        s = s[8..].trim_start();
    }
    let s = s.trim_matches(|c: char| c.is_whitespace() || QUOTES.contains(&c));
    if s.is_empty() {
        return Err(format!("empty speaker message (raw reply {text:?})"));
    }
    let words = s.split_whitespace().count();
    Ok(SpeakerMessage {
        text: s.to_string(),
        words,
        over_hint: words > max_words_hint,
    })
}
