//! Per-trial label assignment and presentation manipulations.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::variant::{ContextPolicy, Manipulation};
use crate::model::{repetition_of, ContextView, CONTEXT_SIZE, REPETITIONS};
use crate::seed::trial_rng;

/// Which canonical image sits at each display position on one trial.
/// `permutation[k]` is the canonical index shown under the k-th label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelAssignment {
    pub trial_index: usize,
    pub permutation: [usize; CONTEXT_SIZE],
    pub seed: u64,
}

const IDENTITY: [usize; CONTEXT_SIZE] = [0, 1, 2, 3];

impl LabelAssignment {
    pub fn is_identity(&self) -> bool {
        self.permutation == IDENTITY
    }

    /// Context view over `canonical_ids` (interaction image order) named by
    /// `labels` in display order.
    pub fn view(&self, canonical_ids: &[String], labels: &[&str], presented: bool) -> ContextView {
        let slots = self.permutation.iter().map(|&k| canonical_ids[k].clone()).collect();
        let labels = labels.iter().map(|s| s.to_string()).collect();
        ContextView::new(slots, labels, presented)
    }
}

/// Labels for one trial. Only the shuffled policy permutes; every other
/// policy keeps labels fixed for the whole game.
pub fn assign_labels(interaction_id: &str, trial_index: usize, policy: ContextPolicy, seed: u64) -> LabelAssignment {
    let permutation = match policy {
        ContextPolicy::EveryTrialShuffled => {
            let mut p = IDENTITY;
            p.shuffle(&mut trial_rng(seed, interaction_id, trial_index, "labels"));
            p
        }
        _ => IDENTITY,
    };
    LabelAssignment {
        trial_index,
        permutation,
        seed,
    }
}

/// Uniform over the 23 non-identity permutations of four elements.
fn misleading_permutation<R: Rng>(rng: &mut R) -> [usize; CONTEXT_SIZE] {
    loop {
        let mut p = IDENTITY;
        p.shuffle(rng);
        if p != IDENTITY {
            return p;
        }
    }
}

/// The view actually displayed for `trial_index`. Gold labels live in the
/// input view and are never touched: misleading manipulations move images
/// between labels only in the returned copy.
///
/// `seed` is interaction-scoped.
pub fn apply_manipulation(
    context: &ContextView,
    manipulation: Manipulation,
    trial_index: usize,
    seed: u64,
) -> ContextView {
    let mislead = match manipulation {
        Manipulation::None => return context.clone(),
        Manipulation::MaskAll => {
            let mut out = context.clone();
            out.masked = true;
            return out;
        }
        Manipulation::MisleadAll => true,
        Manipulation::MisleadLastRep => repetition_of(trial_index) == REPETITIONS,
    };
    if !mislead || context.slots.len() != CONTEXT_SIZE {
        return context.clone();
    }
    let perm = misleading_permutation(&mut trial_rng(seed, "", trial_index, "mislead"));
    let mut out = context.clone();
    out.slots = perm.iter().map(|&k| context.slots[k].clone()).collect();
    out
}
