//! Exact two-sided sign test.

use serde::{Deserialize, Serialize};

use super::StatsError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignTestResult {
    pub n_positive: usize,
    pub n_negative: usize,
    pub n_ties: usize,
    /// `None` when every pair is tied: the test is undefined.
    pub p_value: Option<f64>,
}

impl SignTestResult {
    pub fn is_undefined(&self) -> bool {
        self.p_value.is_none()
    }
}

/// Signs of `a - b`. Ties are dropped before the binomial test.
pub fn sign_test(pairs: &[(f64, f64)]) -> Result<SignTestResult, StatsError> {
    if pairs.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let mut pos = 0;
    let mut neg = 0;
    let mut ties = 0;
    for &(a, b) in pairs {
        if a.is_nan() || b.is_nan() {
            return Err(StatsError::InvalidSpec("sign test input contains NaN".into()));
        }
        match a.partial_cmp(&b) {
            Some(std::cmp::Ordering::Greater) => pos += 1,
            Some(std::cmp::Ordering::Less) => neg += 1,
            _ => ties += 1,
        }
    }
    let n = pos + neg;
    let p_value = (n > 0).then(|| binomial_two_sided(pos.min(neg), n));
    Ok(SignTestResult {
        n_positive: pos,
        n_negative: neg,
        n_ties: ties,
        p_value,
    })
}

/// 2 * P(X <= k) for X ~ Binomial(n, 1/2), capped at 1.
pub fn binomial_two_sided(k: usize, n: usize) -> f64 {
    let ln_half_n = n as f64 * std::f64::consts::LN_2;
    // ln C(n, i) by the multiplicative recurrence
    let mut ln_c = 0.0;
    let mut tail = 0.0;
    for i in 0..=k {
        if i > 0 {
            ln_c += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        tail += (ln_c - ln_half_n).exp();
    }
    (2.0 * tail).min(1.0)
}
