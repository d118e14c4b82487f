//! Game data model: images, context views, trial records and interactions.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use image::RgbImage;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Images per reference context.
pub const CONTEXT_SIZE: usize = 4;
/// Repetitions per interaction.
pub const REPETITIONS: usize = 6;
/// Trials per interaction.
pub const TRIALS: usize = CONTEXT_SIZE * REPETITIONS;

/// Letter labels in display order.
pub const LETTER_LABELS: [&str; CONTEXT_SIZE] = ["A", "B", "C", "D"];
/// Position labels used when the context is merged into a 2x2 grid.
pub const GRID_LABELS: [&str; CONTEXT_SIZE] = ["top left", "top right", "bottom left", "bottom right"];

/// Repetition (1-based) that a 1-based trial index falls in.
pub fn repetition_of(trial_index: usize) -> usize {
    trial_index.div_ceil(CONTEXT_SIZE)
}

#[derive(Debug, thiserror::Error)]
#[error("cannot decode image {path}: {reason}")]
pub struct ImageLoadError {
    pub path: String,
    pub reason: String,
}

#[derive(Clone)]
enum ImageSource {
    File(PathBuf),
    Memory,
    Unresolved,
}

/// A context image. File-backed images are decoded on first access and the
/// raster is shared between clones.
#[derive(Clone)]
pub struct ImageRef {
    id: String,
    source: ImageSource,
    raster: Arc<OnceLock<Arc<RgbImage>>>,
}

impl ImageRef {
    pub fn from_file(id: impl Into<String>, path: impl Into<PathBuf>) -> Self {
        Self {
            id: id.into(),
            source: ImageSource::File(path.into()),
            raster: Arc::new(OnceLock::new()),
        }
    }

    pub fn from_raster(id: impl Into<String>, raster: RgbImage) -> Self {
        let cell = OnceLock::new();
        let _ = cell.set(Arc::new(raster));
        Self {
            id: id.into(),
            source: ImageSource::Memory,
            raster: Arc::new(cell),
        }
    }

    /// Id-only reference for records whose pixels are not available, such
    /// as images of a generated run read back from a transcript.
    pub fn unresolved(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            source: ImageSource::Unresolved,
            raster: Arc::new(OnceLock::new()),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn path(&self) -> Option<&Path> {
        match &self.source {
            ImageSource::File(p) => Some(p),
            ImageSource::Memory | ImageSource::Unresolved => None,
        }
    }

    /// Decoded RGB raster. Rejects empty images.
    pub fn pixels(&self) -> Result<Arc<RgbImage>, ImageLoadError> {
        if let Some(r) = self.raster.get() {
            return Ok(r.clone());
        }
        let path = match &self.source {
            ImageSource::File(p) => p,
            ImageSource::Memory => unreachable!("in-memory rasters are set at construction"),
            ImageSource::Unresolved => {
                return Err(ImageLoadError {
                    path: self.id.clone(),
                    reason: "no image data for this id".into(),
                })
            }
        };
        let decoded = image::open(path).map_err(|e| ImageLoadError {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let rgb = decoded.to_rgb8();
        if rgb.width() == 0 || rgb.height() == 0 {
            return Err(ImageLoadError {
                path: path.display().to_string(),
                reason: "empty raster".into(),
            });
        }
        Ok(self.raster.get_or_init(|| Arc::new(rgb)).clone())
    }
}

impl fmt::Debug for ImageRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("ImageRef");
        d.field("id", &self.id);
        if let Some(p) = self.path() {
            d.field("path", &p);
        }
        d.finish()
    }
}

impl PartialEq for ImageRef {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id && self.path() == other.path()
    }
}

/// What the listener picked. `Invalid` covers unparseable replies and is
/// scored as wrong.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Selection {
    Label(String),
    Invalid,
}

impl Selection {
    pub const INVALID: &'static str = "INVALID";

    pub fn label(&self) -> Option<&str> {
        match self {
            Selection::Label(l) => Some(l),
            Selection::Invalid => None,
        }
    }

    pub fn as_str(&self) -> &str {
        self.label().unwrap_or(Self::INVALID)
    }
}

impl From<&str> for Selection {
    fn from(s: &str) -> Self {
        if s == Self::INVALID || s.is_empty() {
            Selection::Invalid
        } else {
            Selection::Label(s.to_string())
        }
    }
}

impl fmt::Display for Selection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Selection {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Selection {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(Selection::from(s.as_str()))
    }
}

/// The context as laid out for one trial. `labels[k]` names `slots[k]`.
/// Labels are display-level: the same image may carry a different label on
/// another trial.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextView {
    pub slots: Vec<String>,
    pub labels: Vec<String>,
    /// Whether the images are (re-)displayed on this trial.
    pub presented: bool,
    /// Displayed rasters are replaced by black masks.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub masked: bool,
}

impl ContextView {
    pub fn new(slots: Vec<String>, labels: Vec<String>, presented: bool) -> Self {
        Self {
            slots,
            labels,
            presented,
            masked: false,
        }
    }

    /// Slots in the given order with letter labels A-D.
    pub fn lettered(slots: Vec<String>, presented: bool) -> Self {
        let labels = LETTER_LABELS.iter().take(slots.len()).map(|s| s.to_string()).collect();
        Self::new(slots, labels, presented)
    }

    pub fn label_of(&self, image_id: &str) -> Option<&str> {
        self.slots
            .iter()
            .position(|s| s == image_id)
            .map(|k| self.labels[k].as_str())
    }

    pub fn image_at(&self, label: &str) -> Option<&str> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|k| self.slots[k].as_str())
    }

    /// Invariant violations, as human-readable rules.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.slots.len() != CONTEXT_SIZE {
            out.push(format!("context has {} slots, expected {CONTEXT_SIZE}", self.slots.len()));
        }
        if self.labels.len() != self.slots.len() {
            out.push(format!(
                "context has {} labels for {} slots",
                self.labels.len(),
                self.slots.len()
            ));
        }
        if has_duplicates(&self.slots) {
            out.push("context slots contain a duplicate image id".into());
        }
        if has_duplicates(&self.labels) {
            out.push("context labels contain a duplicate".into());
        }
        out
    }
}

fn has_duplicates(items: &[String]) -> bool {
    let mut seen = HashSet::new();
    items.iter().any(|x| !seen.insert(x))
}

/// One trial of a repeated reference game.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial_index: usize,
    pub repetition: usize,
    /// Gold context view. Presentation manipulations never alter it.
    pub context: ContextView,
    pub target_id: String,
    pub speaker_message: String,
    pub listener_selection: Selection,
    pub feedback_text: String,
    pub raw_agent_output: String,
    /// Fields from the source data that the model does not interpret.
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl TrialRecord {
    pub fn gold_label(&self) -> Option<&str> {
        self.context.label_of(&self.target_id)
    }

    pub fn is_correct(&self) -> bool {
        match (&self.listener_selection, self.gold_label()) {
            (Selection::Label(l), Some(g)) => l == g,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum InteractionSource {
    HumanCorpus,
    Generated,
}

/// A full game over a fixed four-image context.
#[derive(Debug, Clone)]
pub struct Interaction {
    pub id: String,
    pub context_images: Vec<ImageRef>,
    pub trials: Vec<TrialRecord>,
    pub source: InteractionSource,
}

impl Interaction {
    pub fn target_schedule(&self) -> Vec<&str> {
        self.trials.iter().map(|t| t.target_id.as_str()).collect()
    }

    pub fn image(&self, id: &str) -> Option<&ImageRef> {
        self.context_images.iter().find(|i| i.id() == id)
    }

    pub fn image_ids(&self) -> Vec<String> {
        self.context_images.iter().map(|i| i.id().to_string()).collect()
    }

    /// Message for `image_id` in `repetition`, if that trial exists.
    pub fn message_for(&self, repetition: usize, image_id: &str) -> Option<&str> {
        self.trials
            .iter()
            .find(|t| t.repetition == repetition && t.target_id == image_id)
            .map(|t| t.speaker_message.as_str())
    }
}

/// A broken invariant. `trial`/`repetition` locate it when applicable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub trial: Option<usize>,
    pub repetition: Option<usize>,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.trial, self.repetition) {
            (Some(t), _) => write!(f, "trial {t}: {}", self.rule),
            (None, Some(r)) => write!(f, "repetition {r}: {}", self.rule),
            (None, None) => f.write_str(&self.rule),
        }
    }
}

/// Check every interaction and trial invariant. Empty result means valid.
pub fn validate_interaction(interaction: &Interaction) -> Vec<Violation> {
    let mut out = Vec::new();
    let whole = |rule: String| Violation {
        trial: None,
        repetition: None,
        rule,
    };

    if interaction.trials.len() != TRIALS {
        out.push(whole(format!("trial count {} ≠ {TRIALS}", interaction.trials.len())));
    }
    let ids = interaction.image_ids();
    if ids.len() != CONTEXT_SIZE {
        out.push(whole(format!("context has {} images, expected {CONTEXT_SIZE}", ids.len())));
    }
    if has_duplicates(&ids) {
        out.push(whole("context image ids are not unique".into()));
    }
    let id_set: HashSet<&str> = ids.iter().map(String::as_str).collect();

    let mut per_rep: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for (pos, t) in interaction.trials.iter().enumerate() {
        let at = |rule: String| Violation {
            trial: Some(t.trial_index),
            repetition: None,
            rule,
        };
        if t.trial_index != pos + 1 {
            out.push(at(format!("trial index {} at position {}", t.trial_index, pos + 1)));
        }
        if t.repetition != repetition_of(t.trial_index) {
            out.push(at(format!(
                "repetition {} ≠ ceil({}/{CONTEXT_SIZE})",
                t.repetition, t.trial_index
            )));
        }
        for p in t.context.problems() {
            out.push(at(p));
        }
        if t.context.slots.iter().any(|s| !id_set.contains(s.as_str())) {
            out.push(at("context slot is not one of the interaction's images".into()));
        }
        if !t.context.slots.contains(&t.target_id) {
            out.push(at(format!("target {} not in context", t.target_id)));
        }
        if t.feedback_text.trim().is_empty() {
            out.push(at("feedback is empty".into()));
        }
        per_rep.entry(t.repetition).or_default().push(&t.target_id);
    }

    // Exactly-once per repetition; incomplete repetitions are already
    // reported through the trial count.
    for (rep, targets) in per_rep {
        let mut seen = HashSet::new();
        let dups: Vec<&str> = targets.iter().copied().filter(|t| !seen.insert(*t)).collect();
        if !dups.is_empty() {
            out.push(Violation {
                trial: None,
                repetition: Some(rep),
                rule: format!("image {} is target more than once", dups.join(", ")),
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Role {
    Speaker,
    Listener,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Speaker => "speaker",
            Role::Listener => "listener",
        })
    }
}

/// Agent id reserved for the recorded-transcript speaker.
pub const REPLAY_AGENT: &str = "replay";

/// Which side the evaluated model plays, and who fills each seat.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleConfig {
    pub model_role: Role,
    pub speaker_agent: String,
    pub listener_agent: String,
}

impl RoleConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.speaker_agent == REPLAY_AGENT && self.listener_agent == REPLAY_AGENT {
            out.push("at most one seat may be a replay agent".into());
        }
        if self.listener_agent == REPLAY_AGENT {
            out.push("the replay agent can only speak".into());
        }
        if self.model_role == Role::Speaker && self.speaker_agent == REPLAY_AGENT {
            out.push("model-as-speaker runs need a generating speaker".into());
        }
        out
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::valid_interaction;
    use super::*;

    #[test]
    fn repetition_is_ceiling_of_trial_over_four() {
        let reps: Vec<usize> = (1..=TRIALS).map(repetition_of).collect();
        for (t, r) in (1..=TRIALS).zip(reps) {
            assert_eq!(r, (t as f64 / 4.0).ceil() as usize);
        }
        assert_eq!(repetition_of(24), 6);
    }

    #[test]
    fn well_formed_interaction_has_no_violations() {
        assert!(validate_interaction(&valid_interaction()).is_empty());
    }

    #[test]
    fn missing_trial_is_one_violation() {
        let mut i = valid_interaction();
        i.trials.pop();
        let v = validate_interaction(&i);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].rule, "trial count 23 ≠ 24");
    }

    #[test]
    fn duplicate_target_names_the_repetition() {
        let mut i = valid_interaction();
        // repetition 2 is trials 5..=8; make trial 6 repeat trial 5's target
        let t5 = i.trials[4].target_id.clone();
        i.trials[5].target_id = t5;
        let v = validate_interaction(&i);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].repetition, Some(2));
        assert!(v[0].to_string().starts_with("repetition 2"));
    }

    #[test]
    fn target_outside_context_is_reported() {
        let mut i = valid_interaction();
        i.trials[0].context.slots[0] = "elsewhere".into();
        let v = validate_interaction(&i);
        assert!(v.iter().any(|x| x.trial == Some(1)));
    }

    #[test]
    fn exactly_once_per_repetition_holds_for_fixture() {
        let i = valid_interaction();
        for rep in 1..=REPETITIONS {
            let mut targets: Vec<&str> = i
                .trials
                .iter()
                .filter(|t| t.repetition == rep)
                .map(|t| t.target_id.as_str())
                .collect();
            targets.sort();
            let mut ids = i.image_ids();
            ids.sort();
            assert_eq!(targets, ids);
        }
    }

    #[test]
    fn invalid_selection_is_wrong_and_serializes_verbatim() {
        let mut t = valid_interaction().trials[0].clone();
        t.listener_selection = Selection::Invalid;
        assert!(!t.is_correct());
        assert_eq!(serde_json::to_string(&t.listener_selection).unwrap(), "\"INVALID\"");
        let back: Selection = serde_json::from_str("\"INVALID\"").unwrap();
        assert_eq!(back, Selection::Invalid);
    }

    #[test]
    fn role_config_rejects_replay_listener() {
        let rc = RoleConfig {
            model_role: Role::Listener,
            speaker_agent: REPLAY_AGENT.into(),
            listener_agent: REPLAY_AGENT.into(),
        };
        assert!(!rc.problems().is_empty());
        let ok = RoleConfig {
            listener_agent: "scripted:perfect".into(),
            ..rc
        };
        assert!(ok.problems().is_empty());
    }
}
