//! Per-repetition aggregates with bootstrap intervals, and their CSV form.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::embedding::{embedding_similarity, WordVectors};
use super::novelty::{wnd, wnr};
use super::tokens::{filter_tokens, LengthTokenizer, Stoplist};
use crate::engine::Transcript;
use crate::model::{Interaction, REPETITIONS};
use crate::stats::{bootstrap_ci, BootstrapSpec, StatsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Metric {
    Length,
    Accuracy,
    Wnr,
    Wnd,
    Similarity,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Length, Metric::Accuracy, Metric::Wnr, Metric::Wnd, Metric::Similarity];

    /// Compares consecutive repetitions, so the series starts at 2.
    pub fn is_pairwise(self) -> bool {
        matches!(self, Metric::Wnr | Metric::Wnd | Metric::Similarity)
    }

    pub fn first_repetition(self) -> usize {
        if self.is_pairwise() {
            2
        } else {
            1
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Length => "LENGTH",
            Metric::Accuracy => "ACCURACY",
            Metric::Wnr => "WNR",
            Metric::Wnd => "WND",
            Metric::Similarity => "SIMILARITY",
        })
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL
            .into_iter()
            .find(|m| m.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown metric '{s}'"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("no transcripts to aggregate")]
    Empty,
    #[error("no complete transcripts ({0} partial ones were excluded)")]
    AllPartial(usize),
    #[error("similarity needs a word-vector table")]
    NoVectors,
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("metrics CSV: {0}")]
    Csv(String),
}

pub struct SeriesOptions<'a> {
    pub tokenizer: &'a dyn LengthTokenizer,
    pub stoplist: &'a Stoplist,
    pub vectors: Option<&'a WordVectors>,
    pub bootstrap: BootstrapSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub repetition: usize,
    /// `None` when no interaction contributed a value.
    pub mean: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    /// Interactions contributing to this repetition.
    pub n: usize,
    /// Message pairs left out because the metric is undefined for them.
    pub excluded_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub metric: Metric,
    pub points: Vec<SeriesPoint>,
}

impl MetricSeries {
    pub fn means(&self) -> Vec<Option<f64>> {
        self.points.iter().map(|p| p.mean).collect()
    }

    pub fn point(&self, repetition: usize) -> Option<&SeriesPoint> {
        self.points.iter().find(|p| p.repetition == repetition)
    }
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// One interaction's value for `metric` at `repetition`, plus the number of
/// undefined pairs skipped.
fn interaction_value(
    metric: Metric,
    i: &Interaction,
    repetition: usize,
    opts: &SeriesOptions<'_>,
) -> Result<(Option<f64>, usize), MetricsError> {
    let in_rep = i.trials.iter().filter(|t| t.repetition == repetition);
    match metric {
        Metric::Length => {
            let xs: Vec<f64> = in_rep.map(|t| opts.tokenizer.count(&t.speaker_message) as f64).collect();
            Ok((mean(&xs), 0))
        }
        Metric::Accuracy => {
            let xs: Vec<f64> = in_rep.map(|t| if t.is_correct() { 1.0 } else { 0.0 }).collect();
            Ok((mean(&xs), 0))
        }
        Metric::Wnr | Metric::Wnd | Metric::Similarity => {
            let vectors = match metric {
                Metric::Similarity => Some(opts.vectors.ok_or(MetricsError::NoVectors)?),
                _ => None,
            };
            let mut xs = Vec::new();
            let mut excluded = 0;
            for t in in_rep {
                let Some(prev) = i.message_for(repetition - 1, &t.target_id) else {
                    continue;
                };
                let reference = filter_tokens(prev, opts.stoplist);
                let hypothesis = filter_tokens(&t.speaker_message, opts.stoplist);
                let v = match metric {
                    Metric::Wnr => wnr(&reference, &hypothesis),
                    Metric::Wnd => Some(wnd(&reference, &hypothesis) as f64),
                    _ => embedding_similarity(&reference, &hypothesis, vectors.expect("checked above")),
                };
                match v {
                    Some(v) => xs.push(v),
                    None => excluded += 1,
                }
            }
            Ok((mean(&xs), excluded))
        }
    }
}

/// Aggregate `metric` over interactions: a per-interaction mean within each
/// repetition, then a bootstrap interval across interactions. Pairwise
/// metrics compare each image's message with its message one repetition
/// earlier and are indexed by the later repetition.
pub fn per_repetition_interactions(
    metric: Metric,
    interactions: &[&Interaction],
    opts: &SeriesOptions<'_>,
) -> Result<MetricSeries, MetricsError> {
    if interactions.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut points = Vec::new();
    for repetition in metric.first_repetition()..=REPETITIONS {
        let mut values = Vec::new();
        let mut excluded_pairs = 0;
        for i in interactions {
            let (v, ex) = interaction_value(metric, i, repetition, opts)?;
            excluded_pairs += ex;
            values.extend(v);
        }
        let (mean, ci_low, ci_high) = if values.is_empty() {
            (None, None, None)
        } else {
            let ci = bootstrap_ci(&values, &opts.bootstrap)?;
            (Some(ci.mean), Some(ci.low), Some(ci.high))
        };
        points.push(SeriesPoint {
            repetition,
            mean,
            ci_low,
            ci_high,
            n: values.len(),
            excluded_pairs,
        });
    }
    Ok(MetricSeries { metric, points })
}

/// [`per_repetition_interactions`] over complete transcripts. Partial ones
/// are skipped with a warning.
pub fn per_repetition(
    metric: Metric,
    transcripts: &[Transcript],
    opts: &SeriesOptions<'_>,
) -> Result<MetricSeries, MetricsError> {
    if transcripts.is_empty() {
        return Err(MetricsError::Empty);
    }
    let complete: Vec<&Interaction> =
        transcripts.iter().filter(|t| t.is_complete()).map(|t| &t.interaction).collect();
    let partial = transcripts.len() - complete.len();
    if partial > 0 {
        log::warn!("{metric}: excluding {partial} partial transcript(s)");
    }
    if complete.is_empty() {
        return Err(MetricsError::AllPartial(partial));
    }
    per_repetition_interactions(metric, &complete, opts)
}

pub const CSV_HEADER: [&str; 7] = ["metric", "repetition", "mean", "ci_low", "ci_high", "n", "excluded_pairs"];

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    metric: Metric,
    repetition: usize,
    mean: Option<f64>,
    ci_low: Option<f64>,
    ci_high: Option<f64>,
    n: usize,
    excluded_pairs: usize,
}

pub fn write_csv<W: Write>(series: &[MetricSeries], w: W) -> Result<(), MetricsError> {
    let mut out = csv::Writer::from_writer(w);
    for s in series {
        for p in &s.points {
            out.serialize(CsvRow {
                metric: s.metric,
                repetition: p.repetition,
                mean: p.mean,
                ci_low: p.ci_low,
                ci_high: p.ci_high,
                n: p.n,
                excluded_pairs: p.excluded_pairs,
            })
            .map_err(|e| MetricsError::Csv(e.to_string()))?;
        }
    }
    out.flush().map_err(|e| MetricsError::Csv(e.to_string()))
}

/// Parse a metrics CSV, requiring the exact column set.
pub fn read_csv<R: Read>(r: R) -> Result<Vec<MetricSeries>, MetricsError> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers().map_err(|e| MetricsError::Csv(e.to_string()))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(MetricsError::Csv(format!(
            "expected columns {}, found {}",
            CSV_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out: Vec<MetricSeries> = Vec::new();
    for (k, row) in rdr.deserialize::<CsvRow>().enumerate() {
        let row = row.map_err(|e| MetricsError::Csv(format!("row {}: {e}", k + 2)))?;
        let point = SeriesPoint {
            repetition: row.repetition,
            mean: row.mean,
            ci_low: row.ci_low,
            ci_high: row.ci_high,
            n: row.n,
            excluded_pairs: row.excluded_pairs,
        };
        match out.iter_mut().find(|s| s.metric == row.metric) {
            Some(s) => s.points.push(point),
            None => out.push(MetricSeries {
                metric: row.metric,
                points: vec![point],
            }),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::WhitespaceTokenizer;
    use crate::model::fixtures::valid_interaction;
    use crate::model::Selection;

    fn opts<'a>(stop: &'a Stoplist, vectors: Option<&'a WordVectors>) -> SeriesOptions<'a> {
        SeriesOptions {
            tokenizer: &WhitespaceTokenizer,
            stoplist: stop,
            vectors,
            bootstrap: BootstrapSpec {
                resamples: 200,
                ..BootstrapSpec::default()
            },
        }
    }

    fn repeating() -> Interaction {
        let mut i = valid_interaction();
        let first: Vec<(String, String)> = i.trials[..4]
            .iter()
            .map(|t| (t.target_id.clone(), t.speaker_message.clone()))
            .collect();
        for t in &mut i.trials {
            t.speaker_message = first.iter().find(|(id, _)| *id == t.target_id).unwrap().1.clone();
        }
        i
    }

    #[test]
    fn all_correct_accuracy() {
        let stop = Stoplist::default();
        let i = valid_interaction();
        let s = per_repetition_interactions(Metric::Accuracy, &[&i, &i], &opts(&stop, None)).unwrap();
        assert_eq!(s.means(), vec![Some(1.0); 6]);
        assert!(s.points.iter().all(|p| p.n == 2));
    }

    #[test]
    fn repeating_messages_have_zero_novelty() {
        let stop = Stoplist::default();
        let i = repeating();
        for m in [Metric::Wnr, Metric::Wnd] {
            let s = per_repetition_interactions(m, &[&i], &opts(&stop, None)).unwrap();
            assert_eq!(s.points.len(), 5);
            assert_eq!(s.points[0].repetition, 2);
            assert_eq!(s.means(), vec![Some(0.0); 5]);
        }
    }

    #[test]
    fn accuracy_counts_wrong_answers() {
        let stop = Stoplist::default();
        let mut i = valid_interaction();
        i.trials[0].listener_selection = Selection::Invalid;
        i.trials[1].listener_selection = Selection::Label("Z".into());
        let s = per_repetition_interactions(Metric::Accuracy, &[&i], &opts(&stop, None)).unwrap();
        assert_eq!(s.points[0].mean, Some(0.5));
    }

    #[test]
    fn empty_reference_is_excluded_and_counted() {
        let stop = Stoplist::default();
        let mut i = repeating();
        let target = i.trials[0].target_id.clone();
        for t in i.trials.iter_mut().filter(|t| t.repetition == 1 && t.target_id == target) {
            t.speaker_message = "the".into();
        }
        let s = per_repetition_interactions(Metric::Wnr, &[&i], &opts(&stop, None)).unwrap();
        assert_eq!(s.points[0].excluded_pairs, 1);
        assert_eq!(s.points[1].excluded_pairs, 0);
    }

    #[test]
    fn order_of_interactions_does_not_matter() {
        let stop = Stoplist::default();
        let a = valid_interaction();
        let b = repeating();
        let ab = per_repetition_interactions(Metric::Wnr, &[&a, &b], &opts(&stop, None)).unwrap();
        let ba = per_repetition_interactions(Metric::Wnr, &[&b, &a], &opts(&stop, None)).unwrap();
        assert_eq!(ab.means(), ba.means());
    }

    #[test]
    fn similarity_requires_vectors() {
        let stop = Stoplist::default();
        let i = valid_interaction();
        let err = per_repetition_interactions(Metric::Similarity, &[&i], &opts(&stop, None)).unwrap_err();
        assert!(matches!(err, MetricsError::NoVectors));
        let v = WordVectors::from_pairs([("picture".to_string(), vec![1.0, 0.0])]);
        let s = per_repetition_interactions(Metric::Similarity, &[&i], &opts(&stop, Some(&v))).unwrap();
        assert_eq!(s.means(), vec![Some(1.0); 5]);
    }

    #[test]
    fn empty_input_is_an_error() {
        let stop = Stoplist::default();
        assert!(matches!(
            per_repetition_interactions(Metric::Length, &[], &opts(&stop, None)),
            Err(MetricsError::Empty)
        ));
    }

    #[test]
    fn csv_round_trip() {
        let stop = Stoplist::default();
        let i = valid_interaction();
        let series: Vec<MetricSeries> = [Metric::Length, Metric::Wnr]
            .into_iter()
            .map(|m| per_repetition_interactions(m, &[&i], &opts(&stop, None)).unwrap())
            .collect();
        let mut buf = Vec::new();
        write_csv(&series, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("metric,repetition,mean,ci_low,ci_high,n,excluded_pairs\n"));
        assert!(text.contains("\nWNR,2,"));
        assert_eq!(read_csv(&buf[..]).unwrap(), series);
        assert!(read_csv("metric,rep\nWNR,2\n".as_bytes()).is_err());
    }
}
