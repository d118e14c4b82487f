//! Bootstrap intervals, the sign test, and the repetition-preference
//! experiment.

mod bootstrap;
mod repeat;
mod sign;

pub use bootstrap::{bootstrap_ci, BootstrapSpec, ConfidenceInterval};
pub use repeat::{
    build_repeat_transcript, repeat_preference_experiment, transcript_score, RepeatError, RepeatOptions,
    RepeatPair, RepeatReport,
};
pub use sign::{binomial_two_sided, sign_test, SignTestResult};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("no samples")]
    EmptyInput,
    #[error("invalid bootstrap spec: {0}")]
    InvalidSpec(String),
}
