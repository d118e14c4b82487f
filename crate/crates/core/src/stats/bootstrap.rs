//! Percentile bootstrap confidence intervals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::StatsError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSpec {
    pub resamples: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for BootstrapSpec {
    fn default() -> Self {
        Self {
            resamples: 10_000,
            confidence: 0.95,
            seed: 0,
        }
    }
}

impl BootstrapSpec {
    pub fn check(&self) -> Result<(), StatsError> {
        if self.resamples == 0 {
            return Err(StatsError::InvalidSpec("resamples must be at least 1".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(StatsError::InvalidSpec(format!(
                "confidence {} outside (0, 1)",
                self.confidence
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub mean: f64,
    pub low: f64,
    pub high: f64,
}

/// Sample mean with a percentile bootstrap interval over resampling with
/// replacement. The interval is widened to contain the sample mean when the
/// resampled distribution alone would exclude it (tiny `resamples`).
pub fn bootstrap_ci(samples: &[f64], spec: &BootstrapSpec) -> Result<ConfidenceInterval, StatsError> {
    spec.check()?;
    if samples.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut means: Vec<f64> = (0..spec.resamples)
        .map(|_| (0..n).map(|_| samples[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);

    let tail = (1.0 - spec.confidence) / 2.0;
    let low = percentile(&means, tail).min(mean);
    let high = percentile(&means, 1.0 - tail).max(mean);
    Ok(ConfidenceInterval { mean, low, high })
}

/// Linear interpolation between closest ranks; `q` in [0, 1].
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = q * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        return sorted[lo];
    }
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(seed: u64) -> BootstrapSpec {
        BootstrapSpec {
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn constant_samples_collapse() {
        let ci = bootstrap_ci(&[0.5; 54], &spec(3)).unwrap();
        assert_eq!((ci.mean, ci.low, ci.high), (0.5, 0.5, 0.5));
    }

    #[test]
    fn single_sample_collapses() {
        let ci = bootstrap_ci(&[7.25], &spec(3)).unwrap();
        assert_eq!((ci.mean, ci.low, ci.high), (7.25, 7.25, 7.25));
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(bootstrap_ci(&[], &spec(0)), Err(StatsError::EmptyInput)));
    }

    #[test]
    fn invalid_spec_is_rejected() {
        let bad = BootstrapSpec {
            confidence: 1.0,
            ..Default::default()
        };
        assert!(bootstrap_ci(&[1.0], &bad).is_err());
        let bad = BootstrapSpec {
            resamples: 0,
            ..Default::default()
        };
        assert!(bootstrap_ci(&[1.0], &bad).is_err());
    }

    #[test]
    fn percentile_interpolates() {
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&xs, 0.0), 0.0);
        assert_eq!(percentile(&xs, 0.5), 2.0);
        assert_eq!(percentile(&xs, 0.125), 0.5);
        assert_eq!(percentile(&xs, 1.0), 4.0);
    }

    #[test]
    fn golden_triple() {
        // frozen output of the seeded resampler (seed 42, 10k resamples)
        let xs = [0.2, 0.9, 0.4, 0.4, 1.0, 0.0, 0.75, 0.6, 0.3, 0.5];
        let ci = bootstrap_ci(&xs, &spec(42)).unwrap();
        assert!((ci.mean - 0.505).abs() < 1e-12);
        assert_eq!((ci.low, ci.high), (GOLDEN_LOW, GOLDEN_HIGH), "{ci:?}");
    }

    const GOLDEN_LOW: f64 = 0.32;
    const GOLDEN_HIGH: f64 = 0.69;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn wider_confidence_wider_interval(
            xs in proptest::collection::vec(-10.0f64..10.0, 1..30),
            seed in 0u64..1000,
        ) {
            let s90 = BootstrapSpec { resamples: 500, confidence: 0.90, seed };
            let s99 = BootstrapSpec { confidence: 0.99, ..s90 };
            let a = bootstrap_ci(&xs, &s90).unwrap();
            let b = bootstrap_ci(&xs, &s99).unwrap();
            prop_assert!(a.low <= a.mean && a.mean <= a.high);
            prop_assert!(b.low <= a.low && a.high <= b.high);
        }
    }
}
