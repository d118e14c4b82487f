//! Word Novelty Rate and Word Novelty Distance.
//!
//! Both come from one edit alignment of the earlier message (reference) to
//! the later one (hypothesis) with unit-cost insert, delete and substitute.
//! Among alignments with the minimal total cost, the one with the fewest
//! insertions + substitutions is chosen. Only insertions and substitutions
//! count as novelty; deletions are free to the score.

use super::tokens::FilteredMessage;

/// Operation counts of the chosen alignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EditCounts {
    pub matches: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub substitutions: usize,
}

impl EditCounts {
    /// Insertions + substitutions.
    pub fn novel(&self) -> usize {
        self.insertions + self.substitutions
    }

    pub fn total(&self) -> usize {
        self.insertions + self.deletions + self.substitutions
    }

    fn key(&self) -> (usize, usize) {
        (self.total(), self.novel())
    }
}

/// Align `reference` to `hypothesis`; minimises (total edits, novel edits)
/// lexicographically.
pub fn align<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditCounts {
    let n = reference.len();
    let m = hypothesis.len();
    // row-major (n+1) x (m+1)
    let mut table = vec![EditCounts::default(); (n + 1) * (m + 1)];
    let idx = |i: usize, j: usize| i * (m + 1) + j;

    for i in 1..=n {
        let mut c = table[idx(i - 1, 0)];
        c.deletions += 1;
        table[idx(i, 0)] = c;
    }
    for j in 1..=m {
        let mut c = table[idx(0, j - 1)];
        c.insertions += 1;
        table[idx(0, j)] = c;
    }
    for i in 1..=n {
        for j in 1..=m {
            let mut diag = table[idx(i - 1, j - 1)];
            if reference[i - 1] == hypothesis[j - 1] {
                diag.matches += 1;
            } else {
                diag.substitutions += 1;
            }
            let mut del = table[idx(i - 1, j)];
            del.deletions += 1;
            let mut ins = table[idx(i, j - 1)];
            ins.insertions += 1;

            let mut best = diag;
            for cand in [del, ins] {
                if cand.key() < best.key() {
                    best = cand;
                }
            }
            table[idx(i, j)] = best;
        }
    }
    table[idx(n, m)]
}

/// Unnormalised novelty count.
pub fn wnd(reference: &FilteredMessage, hypothesis: &FilteredMessage) -> usize {
    align(&reference.tokens, &hypothesis.tokens).novel()
}

/// Novelty count over the reference length. `None` when the reference has no
/// tokens: the pair is undefined and must be excluded, not imputed.
pub fn wnr(reference: &FilteredMessage, hypothesis: &FilteredMessage) -> Option<f64> {
    wnr_tokens(&reference.tokens, &hypothesis.tokens)
}

pub fn wnr_tokens<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Option<f64> {
    if reference.is_empty() {
        return None;
    }
    Some(align(reference, hypothesis).novel() as f64 / reference.len() as f64)
}
