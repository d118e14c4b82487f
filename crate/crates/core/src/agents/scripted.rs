//! Offline agents: recorded replay, playbooks, oracles and a scorer.

use std::collections::HashSet;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{Agent, AgentError, AgentResponse, Call, Capability};
use crate::corpus::colour_name;
use crate::metrics::{filter_tokens, normalize_words, Stoplist};
use crate::model::{repetition_of, Interaction, TRIALS};
use crate::promptkit::{ImagePayload, Prompt, SegmentContent, GRID_GUTTER};

/// How a scripted listener phrases its pick.
fn answer_text(label: &str) -> String {
    if label.chars().count() == 1 {
        format!("Image {label}")
    } else {
        format!("The {label} image.")
    }
}

/// Recorded message of trial `trial_index` (1-based).
pub fn replay_speaker_next(interaction: &Interaction, trial_index: usize) -> Result<&str, AgentError> {
    if !(1..=TRIALS).contains(&trial_index) {
        return Err(AgentError::Script(format!("trial {trial_index} outside 1..={TRIALS}")));
    }
    interaction
        .trials
        .get(trial_index - 1)
        .filter(|t| t.trial_index == trial_index)
        .map(|t| t.speaker_message.as_str())
        .ok_or_else(|| AgentError::Script(format!("interaction {} has no trial {trial_index}", interaction.id)))
}

/// Emits the recorded speaker messages regardless of what the listener did.
pub struct ReplaySpeaker {
    interaction: Interaction,
}

impl ReplaySpeaker {
    pub fn new(interaction: &Interaction) -> Self {
        Self {
            interaction: interaction.clone(),
        }
    }
}

impl Agent for ReplaySpeaker {
    fn name(&self) -> &str {
        "replay"
    }

    fn capability(&self) -> Capability {
        Capability::UNLIMITED
    }

    fn generate(&mut self, call: &Call<'_>) -> Result<AgentResponse, AgentError> {
        replay_speaker_next(&self.interaction, call.trial_index).map(AgentResponse::text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaybookEntry {
    pub reply: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<(String, f64)>>,
}

/// Canned replies, one JSONL line per trial in trial order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Playbook {
    pub source: Option<PathBuf>,
    pub entries: Vec<PlaybookEntry>,
}

impl Playbook {
    pub fn load(path: &Path) -> Result<Self, AgentError> {
        let file = std::fs::File::open(path)
            .map_err(|e| AgentError::Config(format!("cannot read playbook {}: {e}", path.display())))?;
        let mut pb = Self::read(std::io::BufReader::new(file))
            .map_err(|e| AgentError::Config(format!("{}: {e}", path.display())))?;
        pb.source = Some(path.to_path_buf());
        Ok(pb)
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self, String> {
        let mut entries = Vec::new();
        for (k, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| format!("line {}: {e}", k + 1))?;
            if line.trim().is_empty() {
                continue;
            }
            let e: PlaybookEntry = serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", k + 1))?;
            entries.push(e);
        }
        Ok(Self { source: None, entries })
    }

    pub fn from_replies<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            source: None,
            entries: replies
                .into_iter()
                .map(|r| PlaybookEntry {
                    reply: r.into(),
                    logprobs: None,
                })
                .collect(),
        }
    }

    pub fn entry(&self, trial_index: usize) -> Result<&PlaybookEntry, AgentError> {
        trial_index
            .checked_sub(1)
            .and_then(|k| self.entries.get(k))
            .ok_or_else(|| {
                let name = self.source.as_ref().map_or("playbook".into(), |p| p.display().to_string());
                AgentError::Script(format!("{name} has no entry for trial {trial_index}"))
            })
    }
}

pub struct PlaybookAgent {
    playbook: Playbook,
}

impl PlaybookAgent {
    pub fn new(playbook: Playbook) -> Self {
        Self { playbook }
    }
}

impl Agent for PlaybookAgent {
    fn name(&self) -> &str {
        "scripted:playbook"
    }

    fn capability(&self) -> Capability {
        Capability::UNLIMITED
    }

    fn generate(&mut self, call: &Call<'_>) -> Result<AgentResponse, AgentError> {
        let e = self.playbook.entry(call.trial_index)?;
        Ok(AgentResponse {
            token_logprobs: e.logprobs.clone(),
            ..AgentResponse::text(e.reply.clone())
        })
    }
}

/// Answers the gold label of every trial.
pub struct PerfectListener {
    gold_labels: Vec<String>,
}

impl PerfectListener {
    pub fn new(gold_labels: Vec<String>) -> Self {
        Self { gold_labels }
    }
}

impl Agent for PerfectListener {
    fn name(&self) -> &str {
        "scripted:perfect"
    }

    fn capability(&self) -> Capability {
        Capability::UNLIMITED
    }

    fn generate(&mut self, call: &Call<'_>) -> Result<AgentResponse, AgentError> {
        let gold = call
            .trial_index
            .checked_sub(1)
            .and_then(|k| self.gold_labels.get(k))
            .ok_or_else(|| AgentError::Script(format!("no gold label for trial {}", call.trial_index)))?;
        Ok(AgentResponse::text(answer_text(gold)))
    }
}

/// Associates messages with labels through feedback alone.
///
/// From the second repetition on, it finds the earlier trial whose message
/// shares the most content words with the current one (latest on ties) and
/// answers that trial's gold label. In the first repetition, or without any
/// overlap, it defers to the fallback playbook, or to the first label.
pub struct MemorizerListener {
    fallback: Option<Playbook>,
    stoplist: Stoplist,
}

impl MemorizerListener {
    pub fn new(fallback: Option<Playbook>) -> Self {
        Self {
            fallback,
            stoplist: Stoplist::default(),
        }
    }

    fn recall(&self, call: &Call<'_>) -> Option<String> {
        if repetition_of(call.trial_index) < 2 {
            return None;
        }
        let current: HashSet<String> = filter_tokens(call.message?, &self.stoplist).tokens.into_iter().collect();
        let mut best: Option<(usize, &str)> = None;
        for rec in call.history {
            let past = filter_tokens(&rec.speaker_message, &self.stoplist);
            let overlap = past.tokens.iter().collect::<HashSet<_>>().into_iter().filter(|t| current.contains(*t)).count();
            if overlap > 0 && best.is_none_or(|(b, _)| overlap >= b) {
                if let Some(gold) = rec.gold_label() {
                    best = Some((overlap, gold));
                }
            }
        }
        best.map(|(_, g)| answer_text(g))
    }
}

impl Agent for MemorizerListener {
    fn name(&self) -> &str {
        "scripted:memorizer"
    }

    fn capability(&self) -> Capability {
        Capability::UNLIMITED
    }

    fn generate(&mut self, call: &Call<'_>) -> Result<AgentResponse, AgentError> {
        if let Some(answer) = self.recall(call) {
            return Ok(AgentResponse::text(answer));
        }
        match &self.fallback {
            Some(pb) => Ok(AgentResponse::text(pb.entry(call.trial_index)?.reply.clone())),
            None => Ok(AgentResponse::text(
                call.labels.first().map(|l| answer_text(l)).unwrap_or_default(),
            )),
        }
    }
}

/// Mean colour of a raster region.
fn mean_colour(r: &RgbImage, x0: u32, y0: u32, w: u32, h: u32) -> [u8; 3] {
    let mut sum = [0u64; 3];
    let mut n = 0u64;
    for y in y0..(y0 + h).min(r.height()) {
        for x in x0..(x0 + w).min(r.width()) {
            let p = r.get_pixel(x, y).0;
            for c in 0..3 {
                sum[c] += p[c] as u64;
            }
            n += 1;
        }
    }
    if n == 0 {
        return [0, 0, 0];
    }
    sum.map(|s| (s / n) as u8)
}

/// The last label in `labels` mentioned in `text`.
fn last_label<'a>(text: &str, labels: &'a [String]) -> Option<&'a String> {
    labels
        .iter()
        .filter_map(|l| text.rfind(l.as_str()).map(|pos| (pos + l.len(), l)))
        .max_by_key(|(end, l)| (*end, l.len()))
        .map(|(_, l)| l)
}

/// Colour names of the images most recently displayed under each label.
fn displayed_colours(prompt: &Prompt, labels: &[String]) -> Vec<(String, Option<&'static str>)> {
    let mut seen: Vec<(String, Option<&'static str>)> = Vec::new();
    let mut record = |label: &str, colour: Option<&'static str>| {
        seen.retain(|(l, _)| l != label);
        seen.push((label.to_string(), colour));
    };
    let mut text_since_image = String::new();
    for seg in &prompt.segments {
        match &seg.content {
            SegmentContent::Text(t) => text_since_image.push_str(t),
            SegmentContent::Image(ImagePayload::Merged { ids, raster }) => {
                let cell_w = raster.width().saturating_sub(GRID_GUTTER) / 2;
                let cell_h = raster.height().saturating_sub(GRID_GUTTER) / 2;
                for (k, label) in labels.iter().enumerate().take(ids.len()) {
                    let col = (k % 2) as u32;
                    let row = (k / 2) as u32;
                    // centre quarter of the cell avoids the white margins
                    let x0 = col * (cell_w + GRID_GUTTER) + cell_w / 4;
                    let y0 = row * (cell_h + GRID_GUTTER) + cell_h / 4;
                    let c = mean_colour(raster, x0, y0, (cell_w / 2).max(1), (cell_h / 2).max(1));
                    record(label, colour_name(c));
                }
                text_since_image.clear();
            }
            SegmentContent::Image(payload) => {
                let tail = text_since_image.rsplit('\n').next().unwrap_or("");
                if let Some(label) = last_label(tail, labels) {
                    let colour = payload
                        .raster()
                        .ok()
                        .and_then(|r| colour_name(mean_colour(&r, 0, 0, r.width(), r.height())));
                    record(label, colour);
                }
                text_since_image.clear();
            }
        }
    }
    seen
}

/// Picks the label under which the message's colour word is displayed.
/// Works from the prompt only, so it sees exactly what a model would see.
pub struct ContentListener;

impl Agent for ContentListener {
    fn name(&self) -> &str {
        "scripted:content"
    }

    fn capability(&self) -> Capability {
        Capability::UNLIMITED
    }

    fn generate(&mut self, call: &Call<'_>) -> Result<AgentResponse, AgentError> {
        let words: HashSet<String> = normalize_words(call.message.unwrap_or_default()).into_iter().collect();
        let shown = displayed_colours(call.prompt, call.labels);
        let pick = shown
            .iter()
            .find(|(_, c)| c.is_some_and(|c| words.contains(c)))
            .map(|(l, _)| answer_text(l));
        Ok(AgentResponse::text(pick.unwrap_or_else(|| "I cannot tell.".into())))
    }
}

/// Names the colour displayed under the target label.
pub struct ContentSpeaker;

impl Agent for ContentSpeaker {
    fn name(&self) -> &str {
        "scripted:content"
    }

    fn capability(&self) -> Capability {
        Capability::UNLIMITED
    }

    fn generate(&mut self, call: &Call<'_>) -> Result<AgentResponse, AgentError> {
        let labels: Vec<String> = if call.labels.is_empty() {
            crate::model::LETTER_LABELS.iter().map(|s| s.to_string()).collect()
        } else {
            call.labels.to_vec()
        };
        let last_text = call
            .prompt
            .segments
            .iter()
            .rev()
            .find_map(|s| match &s.content {
                SegmentContent::Text(t) => Some(t.rsplit("\n\n").next().unwrap_or(t).to_string()),
                SegmentContent::Image(_) => None,
            })
            .unwrap_or_default();
        let target = last_label(&last_text, &labels)
            .ok_or_else(|| AgentError::Script("cannot find the target label in the prompt".into()))?;
        let colour = displayed_colours(call.prompt, &labels)
            .into_iter()
            .find(|(l, _)| l == target)
            .and_then(|(_, c)| c);
        Ok(AgentResponse::text(match colour {
            Some(c) => format!("Message: the {c} one"),
            None => "Message: the same one as before".into(),
        }))
    }
}

/// Scores every token `base`, plus `repeat_bonus` when the token already
/// occurs in the prefix text.
pub struct ScriptedScorer {
    base: f64,
    repeat_bonus: f64,
}

impl ScriptedScorer {
    pub fn new(base: f64, repeat_bonus: f64) -> Self {
        Self { base, repeat_bonus }
    }
}

impl Agent for ScriptedScorer {
    fn name(&self) -> &str {
        "scripted:scorer"
    }

    fn capability(&self) -> Capability {
        Capability {
            supports_scoring: true,
            ..Capability::UNLIMITED
        }
    }

    fn generate(&mut self, _call: &Call<'_>) -> Result<AgentResponse, AgentError> {
        Err(AgentError::Script("the scripted scorer does not generate".into()))
    }

    fn token_logprobs(&mut self, prefix: &Prompt, continuation: &str) -> Result<Vec<(String, f64)>, AgentError> {
        let seen: HashSet<String> = prefix
            .segments
            .iter()
            .filter_map(|s| match &s.content {
                SegmentContent::Text(t) => Some(normalize_words(t)),
                SegmentContent::Image(_) => None,
            })
            .flatten()
            .collect();
        Ok(normalize_words(continuation)
            .into_iter()
            .map(|w| {
                let lp = if seen.contains(&w) { self.base + self.repeat_bonus } else { self.base };
                (w, lp)
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use image::Rgb;

    use super::*;
    use crate::agents::{score_text, Decode};
    use crate::model::fixtures::valid_interaction;
    use crate::model::{ImageRef, Role, TrialRecord};
    use crate::promptkit::{ImagePayload, Turn};

    fn call<'a>(p: &'a Prompt, t: usize, labels: &'a [String], msg: Option<&'a str>, hist: &'a [TrialRecord]) -> Call<'a> {
        Call {
            role: Role::Listener,
            trial_index: t,
            prompt: p,
            labels,
            message: msg,
            history: hist,
            decode: Decode::default(),
        }
    }

    fn letters() -> Vec<String> {
        ["A", "B", "C", "D"].iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn replay_is_verbatim_and_bounded() {
        let i = valid_interaction();
        let p = Prompt::new(Role::Speaker);
        let mut a = ReplaySpeaker::new(&i);
        for t in 1..=24 {
            let r = a.generate(&call(&p, t, &[], None, &[])).unwrap();
            assert_eq!(r.text, i.trials[t - 1].speaker_message);
        }
        assert!(replay_speaker_next(&i, 0).is_err());
        assert!(replay_speaker_next(&i, 25).is_err());
        assert_eq!(replay_speaker_next(&i, 3).unwrap(), replay_speaker_next(&i, 3).unwrap());
    }

    #[test]
    fn playbook_reads_jsonl() {
        let text = "{\"reply\": \"Image B\"}\n\n{\"reply\": \"x\", \"logprobs\": [[\"x\", -0.5]]}\n";
        let pb = Playbook::read(text.as_bytes()).unwrap();
        assert_eq!(pb.entries.len(), 2);
        let mut a = PlaybookAgent::new(pb);
        let p = Prompt::new(Role::Listener);
        assert_eq!(a.generate(&call(&p, 1, &[], None, &[])).unwrap().text, "Image B");
        let r = a.generate(&call(&p, 2, &[], None, &[])).unwrap();
        assert_eq!(r.token_logprobs, Some(vec![("x".into(), -0.5)]));
        assert!(a.generate(&call(&p, 3, &[], None, &[])).is_err());
        let err = Playbook::read("{\"reply\": 1}".as_bytes()).unwrap_err();
        assert!(err.starts_with("line 1"), "{err}");
    }

    #[test]
    fn memorizer_uses_feedback_from_the_same_image() {
        let i = valid_interaction();
        let labels = letters();
        let p = Prompt::new(Role::Listener);
        let fallback = Playbook::from_replies(vec!["Image D"; 24]);
        let mut a = MemorizerListener::new(Some(fallback));
        // repetition 1 comes from the playbook
        let r = a.generate(&call(&p, 1, &labels, Some("the picture img2 rep 1"), &[])).unwrap();
        assert_eq!(r.text, "Image D");
        // trial 5 targets an image last seen in repetition 1
        let t5 = &i.trials[4];
        let msg = t5.speaker_message.clone();
        let r = a.generate(&call(&p, 5, &labels, Some(&msg), &i.trials[..4])).unwrap();
        assert_eq!(r.text, format!("Image {}", t5.gold_label().unwrap()));
    }

    fn solid(id: &str, c: [u8; 3]) -> ImageRef {
        ImageRef::from_raster(id, RgbImage::from_pixel(4, 3, Rgb(c)))
    }

    fn display(labels: &[&str], colours: &[[u8; 3]], masked: bool) -> Prompt {
        let mut p = Prompt::new(Role::Listener);
        p.push_text(Turn::Harness, "Instructions.\n\n");
        for (k, (l, c)) in labels.iter().zip(colours).enumerate() {
            p.push_text(Turn::Harness, &format!("Image {l}: "));
            let img = solid(&format!("i{k}"), *c);
            p.push_image(
                Turn::Harness,
                if masked { ImagePayload::Masked(img) } else { ImagePayload::Image(img) },
            );
            p.push_text(Turn::Harness, "\n");
        }
        p.push_text(Turn::Harness, "Which image is this message referring to: ");
        p
    }

    #[test]
    fn content_listener_reads_pixels() {
        let colours = [[220, 30, 30], [30, 160, 30], [30, 30, 220], [240, 220, 30]];
        let labels = letters();
        let p = display(&["A", "B", "C", "D"], &colours, false);
        let r = ContentListener.generate(&call(&p, 1, &labels, Some("the blue thing"), &[])).unwrap();
        assert_eq!(r.text, "Image C");
        let masked = display(&["A", "B", "C", "D"], &colours, true);
        let r = ContentListener.generate(&call(&masked, 1, &labels, Some("the blue thing"), &[])).unwrap();
        assert_eq!(r.text, "I cannot tell.");
    }

    #[test]
    fn content_speaker_names_target_colour() {
        let colours = [[220, 30, 30], [30, 160, 30], [30, 30, 220], [240, 220, 30]];
        let mut p = display(&["A", "B", "C", "D"], &colours, false);
        p.segments.pop();
        p.push_text(Turn::Harness, "\nTrial 1, the target is Image B.");
        let labels = letters();
        let mut c = call(&p, 1, &labels, None, &[]);
        c.role = Role::Speaker;
        assert_eq!(ContentSpeaker.generate(&c).unwrap().text, "Message: the green one");
    }

    #[test]
    fn scorer_rewards_repeated_tokens() {
        let mut p = Prompt::new(Role::Speaker);
        p.push_text(Turn::Harness, "Trial 1");
        p.push_text(Turn::Agent, "Message: red kite");
        let mut s = ScriptedScorer::new(-1.0, 0.1);
        let repeated = score_text(&mut s, &p, "red kite").unwrap();
        let fresh = score_text(&mut s, &p, "blue wagon").unwrap();
        assert!((repeated.logprob - -1.8).abs() < 1e-12);
        assert_eq!(fresh.logprob, -2.0);
        let mut flat = ScriptedScorer::new(-1.0, 0.0);
        assert_eq!(
            score_text(&mut flat, &p, "red kite").unwrap(),
            score_text(&mut flat, &p, "blue wagon").unwrap()
        );
    }

    #[test]
    fn perfect_answers_gold() {
        let mut a = PerfectListener::new(vec!["C".into(), "top left".into()]);
        let p = Prompt::new(Role::Listener);
        assert_eq!(a.generate(&call(&p, 1, &[], None, &[])).unwrap().text, "Image C");
        assert_eq!(a.generate(&call(&p, 2, &[], None, &[])).unwrap().text, "The top left image.");
        assert!(a.generate(&call(&p, 3, &[], None, &[])).is_err());
    }
}
