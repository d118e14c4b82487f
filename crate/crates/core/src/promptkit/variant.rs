//! The eleven game variants.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::templates::TemplateSet;
use crate::model::{repetition_of, Role, CONTEXT_SIZE, REPETITIONS, TRIALS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VariantName {
    S1,
    S2,
    S3,
    S4,
    L1,
    L2,
    L3,
    L4,
    L5,
    L6,
    L7,
}

impl VariantName {
    pub const ALL: [VariantName; 11] = [
        Self::S1,
        Self::S2,
        Self::S3,
        Self::S4,
        Self::L1,
        Self::L2,
        Self::L3,
        Self::L4,
        Self::L5,
        Self::L6,
        Self::L7,
    ];

    /// Seat the evaluated model occupies.
    pub fn model_role(self) -> Role {
        match self {
            Self::S1 | Self::S2 | Self::S3 | Self::S4 => Role::Speaker,
            _ => Role::Listener,
        }
    }
}

impl fmt::Display for VariantName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for VariantName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown variant '{s}' (expected S1-S4 or L1-L7)"))
    }
}

/// How the reference context is shown over the course of a game.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ContextPolicy {
    /// Shown every trial under a fresh seeded label permutation.
    EveryTrialShuffled,
    /// Shown every trial, labels fixed.
    EveryTrialFixed,
    /// Shown on trial 1 only, labels fixed.
    OnceAtStart,
    /// Every trial is a fresh prompt with its own context and no history.
    NonePerTrialIsolated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Manipulation {
    None,
    /// Every displayed raster becomes black.
    MaskAll,
    /// Displayed images are permuted; gold labels are not.
    MisleadAll,
    /// Like `MisleadAll`, but only for the last repetition, where the
    /// context is re-displayed every trial.
    MisleadLastRep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum HistoryPolicy {
    Full,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Variant {
    pub name: VariantName,
    pub instruction: String,
    pub context_policy: ContextPolicy,
    pub manipulation: Manipulation,
    pub history_policy: HistoryPolicy,
}

impl Variant {
    pub fn new(name: VariantName, templates: &TemplateSet) -> Self {
        use ContextPolicy::*;
        use HistoryPolicy as H;
        use Manipulation as M;
        let (instruction, context_policy, manipulation, history_policy) = match name {
            VariantName::S1 => ("instruction_s1", OnceAtStart, M::None, H::Full),
            VariantName::S2 => ("instruction_s2", OnceAtStart, M::None, H::Full),
            VariantName::S3 => ("instruction_s3", OnceAtStart, M::None, H::Full),
            VariantName::S4 => ("instruction_s4", OnceAtStart, M::None, H::Full),
            VariantName::L1 => ("instruction_listener", EveryTrialShuffled, M::None, H::Full),
            VariantName::L2 => ("instruction_listener", NonePerTrialIsolated, M::None, H::None),
            VariantName::L3 => ("instruction_listener", OnceAtStart, M::None, H::Full),
            VariantName::L4 => ("instruction_listener", EveryTrialFixed, M::None, H::Full),
            VariantName::L5 => ("instruction_listener", OnceAtStart, M::MaskAll, H::Full),
            VariantName::L6 => ("instruction_listener", OnceAtStart, M::MisleadAll, H::Full),
            VariantName::L7 => ("instruction_listener", OnceAtStart, M::MisleadLastRep, H::Full),
        };
        Self {
            name,
            instruction: templates.raw(instruction).to_string(),
            context_policy,
            manipulation,
            history_policy,
        }
    }

    pub fn model_role(&self) -> Role {
        self.name.model_role()
    }

    /// Whether the context images are displayed on `trial_index`.
    pub fn presents_context(&self, trial_index: usize) -> bool {
        match self.context_policy {
            ContextPolicy::EveryTrialShuffled | ContextPolicy::EveryTrialFixed | ContextPolicy::NonePerTrialIsolated => {
                true
            }
            ContextPolicy::OnceAtStart => {
                trial_index == 1
                    || (self.manipulation == Manipulation::MisleadLastRep && repetition_of(trial_index) == REPETITIONS)
            }
        }
    }

    /// Image segments in the prompt for `trial_index`. A merged grid counts
    /// as one image per display.
    pub fn image_count_at(&self, trial_index: usize, grid: bool) -> usize {
        let per_display = if grid { 1 } else { CONTEXT_SIZE };
        let displays = match self.history_policy {
            HistoryPolicy::None => usize::from(self.presents_context(trial_index)),
            HistoryPolicy::Full => (1..=trial_index).filter(|&t| self.presents_context(t)).count(),
        };
        displays * per_display
    }

    /// Largest prompt image count over a whole game.
    pub fn peak_image_count(&self, grid: bool) -> usize {
        (1..=TRIALS).map(|t| self.image_count_at(t, grid)).max().unwrap_or(0)
    }
}
