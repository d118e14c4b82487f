//! Prompt construction.
//!
//! [`build_prompt`] turns an instruction, the game history so far and the
//! current trial's stimuli into an ordered list of text and image segments.
//! Segments carry the turn they belong to so adapters can map them onto chat
//! messages; [`Prompt::to_text`] renders the same content as a plain
//! transcript with `[System]`/`[Speaker]`/`[Listener]` tags.

mod grid;
mod labels;
mod templates;
mod variant;

use std::fmt::Write as _;
use std::sync::Arc;

use image::{Rgb, RgbImage};

pub use grid::{merge_grid, MergedGrid, GRID_GUTTER};
pub use labels::{apply_manipulation, assign_labels, LabelAssignment};
pub use templates::{render_feedback, TemplateError, TemplateSet};
pub use variant::{ContextPolicy, HistoryPolicy, Manipulation, Variant, VariantName};

use crate::model::{ContextView, ImageLoadError, ImageRef, Role, Selection, TrialRecord};

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("prompt contract violated: {0}")]
    Contract(String),
    #[error("image {0} is not part of the context")]
    MissingImage(String),
    #[error(transparent)]
    Image(#[from] ImageLoadError),
}

/// Who a segment belongs to. `Harness` is the instruction, stimuli, the
/// simulated interlocutor and feedback; `Agent` is the evaluated agent's own
/// earlier turns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Turn {
    Harness,
    Agent,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ImagePayload {
    Image(ImageRef),
    /// Black raster with the original image's dimensions.
    Masked(ImageRef),
    /// A 2x2 merge of the listed ids, row-major.
    Merged { ids: Vec<String>, raster: Arc<RgbImage> },
}

impl ImagePayload {
    pub fn raster(&self) -> Result<Arc<RgbImage>, ImageLoadError> {
        match self {
            ImagePayload::Image(r) => r.pixels(),
            ImagePayload::Masked(r) => {
                let src = r.pixels()?;
                Ok(Arc::new(RgbImage::from_pixel(src.width(), src.height(), Rgb([0, 0, 0]))))
            }
            ImagePayload::Merged { raster, .. } => Ok(raster.clone()),
        }
    }

    /// Stable placeholder used in text renderings.
    pub fn placeholder(&self) -> String {
        match self {
            ImagePayload::Image(r) => format!("<img:{}>", r.id()),
            ImagePayload::Masked(r) => format!("<mask:{}>", r.id()),
            ImagePayload::Merged { ids, .. } => format!("<grid:{}>", ids.join(",")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SegmentContent {
    Text(String),
    Image(ImagePayload),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptSegment {
    pub turn: Turn,
    pub content: SegmentContent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    /// Role of the agent the prompt is addressed to.
    pub agent_role: Role,
    pub segments: Vec<PromptSegment>,
}

impl Prompt {
    pub fn new(agent_role: Role) -> Self {
        Self {
            agent_role,
            segments: Vec::new(),
        }
    }

    pub fn image_count(&self) -> usize {
        self.segments
            .iter()
            .filter(|s| matches!(s.content, SegmentContent::Image(_)))
            .count()
    }

    pub fn images(&self) -> impl Iterator<Item = &ImagePayload> {
        self.segments.iter().filter_map(|s| match &s.content {
            SegmentContent::Image(p) => Some(p),
            SegmentContent::Text(_) => None,
        })
    }

    pub fn push_text(&mut self, turn: Turn, text: &str) {
        if text.is_empty() {
            return;
        }
        if let Some(PromptSegment {
            turn: last_turn,
            content: SegmentContent::Text(prev),
        }) = self.segments.last_mut()
        {
            if *last_turn == turn {
                prev.push_str(text);
                return;
            }
        }
        self.segments.push(PromptSegment {
            turn,
            content: SegmentContent::Text(text.to_string()),
        });
    }

    pub fn push_image(&mut self, turn: Turn, payload: ImagePayload) {
        self.segments.push(PromptSegment {
            turn,
            content: SegmentContent::Image(payload),
        });
    }

    /// Consecutive segments grouped by turn.
    pub fn turns(&self) -> Vec<(Turn, Vec<&SegmentContent>)> {
        let mut out: Vec<(Turn, Vec<&SegmentContent>)> = Vec::new();
        for s in &self.segments {
            match out.last_mut() {
                Some((t, items)) if *t == s.turn => items.push(&s.content),
                _ => out.push((s.turn, vec![&s.content])),
            }
        }
        out
    }

    /// Copy without image segments.
    pub fn text_only(&self) -> Prompt {
        let mut out = Prompt::new(self.agent_role);
        for s in &self.segments {
            if let SegmentContent::Text(t) = &s.content {
                out.push_text(s.turn, t);
            }
        }
        out
    }

    /// Plain transcript rendering; images appear as placeholders.
    pub fn to_text(&self) -> String {
        let agent_tag = match self.agent_role {
            Role::Speaker => "[Speaker]",
            Role::Listener => "[Listener]",
        };
        let mut out = String::new();
        for (k, (turn, items)) in self.turns().into_iter().enumerate() {
            if k > 0 {
                out.push_str("\n\n");
            }
            out.push_str(match turn {
                Turn::Harness => "[System]",
                Turn::Agent => agent_tag,
            });
            out.push(' ');
            for item in items {
                match item {
                    SegmentContent::Text(t) => out.push_str(t),
                    SegmentContent::Image(p) => {
                        let _ = write!(out, "{}", p.placeholder());
                    }
                }
            }
        }
        out
    }
}

/// What the agent is given on the current trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stimulus<'a> {
    /// Speaker side: the target image id.
    Target(&'a str),
    /// Listener side: the speaker's message.
    Message(&'a str),
}

#[derive(Debug, Clone)]
pub struct CurrentTrial<'a> {
    pub trial_index: usize,
    /// Gold view for this trial.
    pub context: &'a ContextView,
    pub stimulus: Stimulus<'a>,
}

/// Everything [`build_prompt`] reads.
#[derive(Debug, Clone)]
pub struct PromptRequest<'a> {
    pub variant: &'a Variant,
    pub templates: &'a TemplateSet,
    /// The interaction's context images.
    pub images: &'a [ImageRef],
    pub history: &'a [TrialRecord],
    pub current: CurrentTrial<'a>,
    pub role: Role,
    /// Interaction-scoped seed for presentation manipulations.
    pub seed: u64,
    /// Merge each display into a single 2x2 grid image.
    pub grid: bool,
}

/// Assemble the prompt for the current trial. Pure: equal requests give
/// equal prompts.
pub fn build_prompt(req: &PromptRequest<'_>) -> Result<Prompt, PromptError> {
    check_request(req)?;
    let t = req.templates;
    let mut p = Prompt::new(req.role);
    let isolated = req.variant.context_policy == ContextPolicy::NonePerTrialIsolated;

    p.push_text(Turn::Harness, &req.variant.instruction);
    p.push_text(Turn::Harness, "\n\n");

    for rec in req.history {
        let gold = rec
            .gold_label()
            .ok_or_else(|| PromptError::Contract(format!("trial {}: target not in context", rec.trial_index)))?;
        match req.role {
            Role::Listener => {
                p.push_text(Turn::Harness, &t.render("listener_trial", &[("trial", &rec.trial_index.to_string())]));
                p.push_text(Turn::Harness, "\n\n");
                if rec.context.presented {
                    push_display(&mut p, req, &rec.context, rec.trial_index)?;
                }
                p.push_text(Turn::Harness, &t.render("question", &[("message", &rec.speaker_message)]));
                let answer = match &rec.listener_selection {
                    Selection::Label(l) => t.render("listener_answer", &[("label", l)]),
                    Selection::Invalid if !rec.raw_agent_output.trim().is_empty() => {
                        rec.raw_agent_output.trim().to_string()
                    }
                    Selection::Invalid => Selection::INVALID.to_string(),
                };
                p.push_text(Turn::Agent, &answer);
            }
            Role::Speaker => {
                if rec.context.presented {
                    push_display(&mut p, req, &rec.context, rec.trial_index)?;
                    p.push_text(Turn::Harness, "\n");
                }
                p.push_text(
                    Turn::Harness,
                    &t.render(
                        "speaker_trial",
                        &[("trial", &rec.trial_index.to_string()), ("label", gold)],
                    ),
                );
                p.push_text(Turn::Agent, &t.render("speaker_message", &[("message", &rec.speaker_message)]));
            }
        }
        p.push_text(Turn::Harness, &t.feedback(&rec.listener_selection, gold, req.role));
        p.push_text(Turn::Harness, "\n\n");
    }

    let cur = &req.current;
    let trial = cur.trial_index.to_string();
    match (req.role, cur.stimulus) {
        (Role::Listener, Stimulus::Message(msg)) => {
            if !isolated {
                p.push_text(Turn::Harness, &t.render("listener_trial", &[("trial", &trial)]));
                p.push_text(Turn::Harness, "\n\n");
            }
            if cur.context.presented {
                push_display(&mut p, req, cur.context, cur.trial_index)?;
            }
            p.push_text(Turn::Harness, &t.render("question", &[("message", msg)]));
        }
        (Role::Speaker, Stimulus::Target(target)) => {
            let label = cur
                .context
                .label_of(target)
                .ok_or_else(|| PromptError::Contract(format!("target {target} not in the current context")))?;
            if cur.context.presented {
                push_display(&mut p, req, cur.context, cur.trial_index)?;
                p.push_text(Turn::Harness, "\n");
            }
            p.push_text(
                Turn::Harness,
                &t.render("speaker_trial", &[("trial", &trial), ("label", label)]),
            );
        }
        _ => unreachable!("checked in check_request"),
    }
    Ok(p)
}

fn check_request(req: &PromptRequest<'_>) -> Result<(), PromptError> {
    let v = req.variant;
    if req.role != v.model_role() {
        return Err(PromptError::Contract(format!(
            "variant {} addresses the {}, not the {}",
            v.name,
            v.model_role(),
            req.role
        )));
    }
    match (req.role, req.current.stimulus) {
        (Role::Listener, Stimulus::Message(_)) | (Role::Speaker, Stimulus::Target(_)) => {}
        _ => {
            return Err(PromptError::Contract(format!(
                "{} prompt given the wrong kind of stimulus",
                req.role
            )))
        }
    }
    if v.history_policy == HistoryPolicy::None && !req.history.is_empty() {
        return Err(PromptError::Contract(format!(
            "variant {} takes no history but {} trials were given",
            v.name,
            req.history.len()
        )));
    }
    if v.history_policy == HistoryPolicy::Full {
        for (k, rec) in req.history.iter().enumerate() {
            if rec.trial_index != k + 1 {
                return Err(PromptError::Contract(format!(
                    "history position {} holds trial {}",
                    k + 1,
                    rec.trial_index
                )));
            }
        }
        if req.current.trial_index != req.history.len() + 1 {
            return Err(PromptError::Contract(format!(
                "current trial {} does not follow {} history trials",
                req.current.trial_index,
                req.history.len()
            )));
        }
    }
    let shown = req
        .history
        .iter()
        .map(|r| (r.trial_index, r.context.presented))
        .chain(std::iter::once((req.current.trial_index, req.current.context.presented)));
    for (trial, presented) in shown {
        if presented != v.presents_context(trial) {
            return Err(PromptError::Contract(format!(
                "trial {trial}: context display flag disagrees with variant {}",
                v.name
            )));
        }
    }
    Ok(())
}

/// Emit the displayed context for one trial: four labelled images, or one
/// merged grid.
fn push_display(
    p: &mut Prompt,
    req: &PromptRequest<'_>,
    gold: &ContextView,
    trial_index: usize,
) -> Result<(), PromptError> {
    let shown = apply_manipulation(gold, req.variant.manipulation, trial_index, req.seed);
    let lookup = |id: &str| {
        req.images
            .iter()
            .find(|i| i.id() == id)
            .cloned()
            .ok_or_else(|| PromptError::MissingImage(id.to_string()))
    };
    if req.grid {
        let merged = merge_grid(&shown, req.images, shown.masked)?;
        p.push_text(Turn::Harness, req.templates.raw("grid_intro"));
        p.push_image(
            Turn::Harness,
            ImagePayload::Merged {
                ids: shown.slots.clone(),
                raster: merged.raster,
            },
        );
        p.push_text(Turn::Harness, "\n");
        return Ok(());
    }
    for (label, id) in shown.labels.iter().zip(&shown.slots) {
        let img = lookup(id)?;
        p.push_text(Turn::Harness, &req.templates.render("image_line", &[("label", label)]));
        let payload = if shown.masked {
            ImagePayload::Masked(img)
        } else {
            ImagePayload::Image(img)
        };
        p.push_image(Turn::Harness, payload);
        p.push_text(Turn::Harness, "\n");
    }
    Ok(())
}

#[cfg(test)]
mod tests;
