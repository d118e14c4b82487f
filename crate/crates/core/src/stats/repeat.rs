//! Does a model prefer a speaker who repeats the first repetition's
//! messages over the speaker who actually adapted?

use serde::{Deserialize, Serialize};

use super::sign::{sign_test, SignTestResult};
use super::StatsError;
use crate::agents::{score_text, Agent, AgentError, Score};
use crate::model::{ContextView, Interaction, Role, TrialRecord, TRIALS};
use crate::promptkit::{
    build_prompt, CurrentTrial, PromptError, PromptRequest, Stimulus, TemplateSet, Turn, Variant, VariantName,
};

/// Copy of `interaction` whose repetitions 2 to 6 reuse, for each image, the
/// message from repetition 1.
pub fn build_repeat_transcript(interaction: &Interaction) -> Interaction {
    let mut out = interaction.clone();
    for t in out.trials.iter_mut().filter(|t| t.repetition > 1) {
        if let Some(first) = interaction.message_for(1, &t.target_id) {
            t.speaker_message = first.to_string();
        }
    }
    out
}

#[derive(Debug, thiserror::Error)]
pub enum RepeatError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("interaction {id}: {source}")]
    Prompt { id: String, source: PromptError },
    #[error("interaction {0} is incomplete")]
    Incomplete(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone)]
pub struct RepeatOptions {
    pub templates: TemplateSet,
    /// Speaker variant used to render transcripts.
    pub variant: VariantName,
    /// Condition on the context images as well as the text.
    pub include_images: bool,
}

impl Default for RepeatOptions {
    fn default() -> Self {
        Self {
            templates: TemplateSet::letters(),
            variant: VariantName::S1,
            include_images: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatPair {
    pub interaction_id: String,
    pub original: Score,
    pub repeated: Score,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatReport {
    /// Positive when the repeated transcript has the higher log-probability.
    pub logprob: SignTestResult,
    /// Positive when the repeated transcript has the lower perplexity.
    pub perplexity: SignTestResult,
    pub pairs: Vec<RepeatPair>,
}

/// Speaker messages of `interaction` scored in order, each conditioned on
/// the speaker-side prompt of everything before it. Totals over all trials.
pub fn transcript_score(
    agent: &mut dyn Agent,
    interaction: &Interaction,
    opts: &RepeatOptions,
) -> Result<Score, RepeatError> {
    if interaction.trials.len() != TRIALS {
        return Err(RepeatError::Incomplete(interaction.id.clone()));
    }
    let variant = Variant::new(opts.variant, &opts.templates);
    let prompt_err = |source| RepeatError::Prompt {
        id: interaction.id.clone(),
        source,
    };
    let records: Vec<TrialRecord> = interaction
        .trials
        .iter()
        .map(|t| {
            let mut r = t.clone();
            r.context = ContextView {
                presented: variant.presents_context(t.trial_index),
                masked: false,
                ..t.context.clone()
            };
            r
        })
        .collect();

    let mut total = Score {
        logprob: 0.0,
        tokens: 0,
    };
    for (k, rec) in records.iter().enumerate() {
        let req = PromptRequest {
            variant: &variant,
            templates: &opts.templates,
            images: &interaction.context_images,
            history: &records[..k],
            current: CurrentTrial {
                trial_index: rec.trial_index,
                context: &rec.context,
                stimulus: Stimulus::Target(&rec.target_id),
            },
            role: Role::Speaker,
            seed: 0,
            grid: false,
        };
        let mut prefix = build_prompt(&req).map_err(prompt_err)?;
        prefix.push_text(Turn::Agent, &opts.templates.render("speaker_message", &[("message", "")]));
        if !opts.include_images {
            prefix = prefix.text_only();
        }
        let s = score_text(agent, &prefix, &rec.speaker_message)?;
        total.logprob += s.logprob;
        total.tokens += s.tokens;
    }
    Ok(total)
}

/// Score every interaction and its repeat transcript; sign-test the paired
/// log-probabilities and perplexities.
pub fn repeat_preference_experiment(
    agent: &mut dyn Agent,
    interactions: &[Interaction],
    opts: &RepeatOptions,
) -> Result<RepeatReport, RepeatError> {
    if !agent.capability().supports_scoring {
        return Err(AgentError::Capability(format!("{} does not return log-probabilities", agent.name())).into());
    }
    let mut pairs = Vec::new();
    for i in interactions {
        let original = transcript_score(agent, i, opts)?;
        let repeated = transcript_score(agent, &build_repeat_transcript(i), opts)?;
        pairs.push(RepeatPair {
            interaction_id: i.id.clone(),
            original,
            repeated,
        });
    }
    let lp: Vec<(f64, f64)> = pairs.iter().map(|p| (p.repeated.logprob, p.original.logprob)).collect();
    let ppl: Vec<(f64, f64)> = pairs
        .iter()
        .map(|p| match (p.original.perplexity(), p.repeated.perplexity()) {
            (Some(o), Some(r)) => (o, r),
            _ => (0.0, 0.0),
        })
        .collect();
    Ok(RepeatReport {
        logprob: sign_test(&lp)?,
        perplexity: sign_test(&ppl)?,
        pairs,
    })
}
