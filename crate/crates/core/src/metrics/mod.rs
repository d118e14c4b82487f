//! Adaptation measurements over finished games.

mod embedding;
mod novelty;
mod series;
mod tokens;

pub use embedding::{embedding_similarity, VectorError, WordVectors};
pub use novelty::{align, wnd, wnr, wnr_tokens, EditCounts};
pub use series::{
    per_repetition, per_repetition_interactions, read_csv, write_csv, Metric, MetricSeries, MetricsError,
    SeriesOptions, SeriesPoint, CSV_HEADER,
};
pub use tokens::{filter_tokens, normalize_words, FilteredMessage, LengthTokenizer, Stoplist, WhitespaceTokenizer};
