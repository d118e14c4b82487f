//! Averaged word-vector cosine similarity.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use super::tokens::FilteredMessage;

#[derive(Debug, thiserror::Error)]
pub enum VectorError {
    #[error("cannot read vector file: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

/// Word vectors in GloVe text format: a word followed by `dim` floats per
/// line. A leading word2vec-style "count dim" header is skipped.
#[derive(Debug, Clone, Default)]
pub struct WordVectors {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl WordVectors {
    pub fn load(path: &Path) -> Result<Self, VectorError> {
        let file = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(file))
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self, VectorError> {
        let mut out = WordVectors::default();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = n + 1;
            let mut fields = line.split_whitespace();
            let Some(word) = fields.next() else { continue };
            let rest: Vec<&str> = fields.collect();
            if lineno == 1 && rest.len() == 1 && word.parse::<usize>().is_ok() && rest[0].parse::<usize>().is_ok() {
                continue;
            }
            let values = rest
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| VectorError::Malformed {
                    line: lineno,
                    reason: e.to_string(),
                })?;
            if values.is_empty() {
                return Err(VectorError::Malformed {
                    line: lineno,
                    reason: format!("no components for '{word}'"),
                });
            }
            if out.dim == 0 {
                out.dim = values.len();
            } else if values.len() != out.dim {
                return Err(VectorError::Malformed {
                    line: lineno,
                    reason: format!("expected {} components, found {}", out.dim, values.len()),
                });
            }
            out.vectors.insert(word.to_string(), values);
        }
        Ok(out)
    }

    pub fn from_pairs<I: IntoIterator<Item = (String, Vec<f64>)>>(pairs: I) -> Self {
        let vectors: HashMap<_, _> = pairs.into_iter().collect();
        let dim = vectors.values().next().map_or(0, Vec::len);
        Self { dim, vectors }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    /// Mean of the in-vocabulary token vectors, or `None` if none are known.
    pub fn mean_vector(&self, tokens: &[String]) -> Option<Vec<f64>> {
        let mut acc = vec![0.0; self.dim];
        let mut n = 0usize;
        for v in tokens.iter().filter_map(|t| self.get(t)) {
            for (a, x) in acc.iter_mut().zip(v) {
                *a += x;
            }
            n += 1;
        }
        if n == 0 {
            return None;
        }
        acc.iter_mut().for_each(|a| *a /= n as f64);
        Some(acc)
    }
}

/// Cosine of the mean vectors. `None` when either side has no known token
/// or a zero mean vector.
pub fn embedding_similarity(a: &FilteredMessage, b: &FilteredMessage, vectors: &WordVectors) -> Option<f64> {
    let va = vectors.mean_vector(&a.tokens)?;
    let vb = vectors.mean_vector(&b.tokens)?;
    let dot: f64 = va.iter().zip(&vb).map(|(x, y)| x * y).sum();
    let na = va.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = vb.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}
