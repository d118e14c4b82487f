//! Playing games.
//!
//! [`run_interaction`] plays one 24-trial game: on each trial the speaker
//! seat produces a message (replayed or generated), the listener seat picks
//! a label, and the trial is scored against the gold label and appended to
//! the transcript. [`run_batch`] plays many games on a bounded pool of
//! threads.

mod transcript;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

pub use transcript::{
    read_transcript, read_transcript_dir, RunErrorRecord, RunSnapshot, RunStatus, Transcript, TranscriptError, TrialIo,
};
use transcript::{Footer, Header, Line, TrialLine, TranscriptWriter};

use crate::agents::{
    complete, parse_listener_choice, parse_speaker_message, replay_speaker_next, Agent, AgentEnv, AgentError,
    AgentSpec, Call, Decode,
};
use crate::model::{
    validate_interaction, ContextView, Interaction, InteractionSource, Role, RoleConfig, TrialRecord, GRID_LABELS,
    LETTER_LABELS, TRIALS,
};
use crate::promptkit::{
    assign_labels, build_prompt, CurrentTrial, HistoryPolicy, PromptError, PromptRequest, Stimulus, TemplateSet,
    Variant, VariantName,
};
use crate::seed::{fingerprint, interaction_seed};

/// Everything needed to play one game.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub variant: VariantName,
    pub speaker: AgentSpec,
    pub listener: AgentSpec,
    /// Source of targets and, for a replay speaker, of messages.
    pub interaction: Interaction,
    pub master_seed: u64,
    /// Transcript path. An existing unfinished transcript of the same run is
    /// resumed.
    pub output: Option<PathBuf>,
    /// Show each display as one merged 2x2 image.
    pub grid: bool,
    pub templates: TemplateSet,
    pub decode: Decode,
    pub adapters_dir: PathBuf,
}

impl RunConfig {
    /// Defaults: replay speaker, letter templates, temperature 0.
    pub fn new(variant: VariantName, listener: AgentSpec, interaction: Interaction) -> Self {
        Self {
            variant,
            speaker: AgentSpec::Replay,
            listener,
            interaction,
            master_seed: 0,
            output: None,
            grid: false,
            templates: TemplateSet::letters(),
            decode: Decode::default(),
            adapters_dir: PathBuf::from("adapters"),
        }
    }

    pub fn role_config(&self) -> RoleConfig {
        RoleConfig {
            model_role: self.variant.model_role(),
            speaker_agent: self.speaker.to_string(),
            listener_agent: self.listener.to_string(),
        }
    }

    /// Variant used to build speaker prompts.
    pub fn speaker_variant(&self) -> VariantName {
        match self.variant.model_role() {
            Role::Speaker => self.variant,
            Role::Listener => VariantName::S1,
        }
    }

    /// Variant used to build listener prompts. Games with a model speaker
    /// show the listener the context once, as in L3.
    pub fn listener_variant(&self) -> VariantName {
        match self.variant.model_role() {
            Role::Listener => self.variant,
            Role::Speaker => VariantName::L3,
        }
    }

    pub fn labels(&self) -> Vec<String> {
        let l: &[&str] = if self.grid { &GRID_LABELS } else { &LETTER_LABELS };
        l.iter().map(|s| s.to_string()).collect()
    }

    pub fn snapshot(&self) -> RunSnapshot {
        RunSnapshot {
            variant: self.variant,
            speaker: self.speaker.clone(),
            listener: self.listener.clone(),
            interaction_id: self.interaction.id.clone(),
            master_seed: self.master_seed,
            interaction_seed: interaction_seed(self.master_seed, &self.interaction.id),
            grid: self.grid,
            decode: self.decode,
            templates: self.templates.digest(),
        }
    }

    pub fn run_id(&self) -> String {
        fingerprint(&[&serde_json::to_string(&self.snapshot()).expect("snapshot serializes")])
    }

    /// Reject configurations that cannot produce a game, before any agent
    /// is called.
    pub fn check(&self) -> Result<(), EngineError> {
        let problems = self.role_config().problems();
        if !problems.is_empty() {
            return Err(EngineError::Config(problems.join("; ")));
        }
        if self.interaction.trials.len() != TRIALS {
            return Err(EngineError::Config(format!(
                "interaction {} has {} trials, expected {TRIALS}",
                self.interaction.id,
                self.interaction.trials.len()
            )));
        }
        let violations = validate_interaction(&self.interaction);
        if !violations.is_empty() {
            let v: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(EngineError::Config(format!("interaction {}: {}", self.interaction.id, v.join("; "))));
        }
        let seats = [
            (Role::Speaker, &self.speaker, self.speaker_variant()),
            (Role::Listener, &self.listener, self.listener_variant()),
        ];
        for (role, spec, variant) in seats {
            if spec.is_replay() {
                continue;
            }
            let cap = spec.capability(&self.adapters_dir).map_err(EngineError::Agent)?;
            let peak = Variant::new(variant, &self.templates).peak_image_count(self.grid);
            if let Some(msg) = cap.refuse(peak) {
                return Err(EngineError::Refused(format!("{role} {spec} under {}: {msg}", self.variant)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("run configuration: {0}")]
    Config(String),
    /// The agent cannot take the variant's largest prompt.
    #[error("refused: {0}")]
    Refused(String),
    #[error(transparent)]
    Agent(AgentError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
}

/// Gold view of one trial.
fn gold_view(cfg: &RunConfig, variant: &Variant, canonical: &[String], trial: usize, seed: u64) -> ContextView {
    let labels = cfg.labels();
    let labels: Vec<&str> = labels.iter().map(String::as_str).collect();
    assign_labels(&cfg.interaction.id, trial, variant.context_policy, seed).view(
        canonical,
        &labels,
        variant.presents_context(trial),
    )
}

fn with_presented(records: &[TrialRecord], variant: &Variant) -> Vec<TrialRecord> {
    records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.context.presented = variant.presents_context(r.trial_index);
            r
        })
        .collect()
}

struct Game<'a> {
    cfg: &'a RunConfig,
    seed: u64,
    sv: Variant,
    lv: Variant,
    canonical: Vec<String>,
    speaker: Option<Box<dyn Agent>>,
    listener: Box<dyn Agent>,
}

enum Stop {
    Agent(Role, String),
}

impl Game<'_> {
    fn trial(&mut self, t: usize, records: &[TrialRecord], errors: &mut Vec<RunErrorRecord>) -> Result<(TrialRecord, TrialIo), Stop> {
        let cfg = self.cfg;
        let target = cfg.interaction.trials[t - 1].target_id.clone();
        let view = gold_view(cfg, &self.lv, &self.canonical, t, self.seed);
        let mut io = TrialIo::default();

        let message = match self.speaker.as_deref_mut() {
            None => replay_speaker_next(&cfg.interaction, t)
                .map_err(|e| Stop::Agent(Role::Speaker, e.to_string()))?
                .to_string(),
            Some(speaker) => {
                let sview = ContextView {
                    presented: self.sv.presents_context(t),
                    ..view.clone()
                };
                let hist = with_presented(records, &self.sv);
                let prompt = build_prompt(&PromptRequest {
                    variant: &self.sv,
                    templates: &cfg.templates,
                    images: &cfg.interaction.context_images,
                    history: &hist,
                    current: CurrentTrial {
                        trial_index: t,
                        context: &sview,
                        stimulus: Stimulus::Target(&target),
                    },
                    role: Role::Speaker,
                    seed: self.seed,
                    grid: cfg.grid,
                })
                .map_err(|e| Stop::Agent(Role::Speaker, e.to_string()))?;
                let call = Call {
                    role: Role::Speaker,
                    trial_index: t,
                    prompt: &prompt,
                    labels: &sview.labels,
                    message: None,
                    history: records,
                    decode: cfg.decode,
                };
                let resp = complete(speaker, &call).map_err(|e| Stop::Agent(Role::Speaker, e.to_string()))?;
                io.speaker_raw = Some(resp.text.clone());
                io.speaker_latency_ms = resp.latency_ms;
                match parse_speaker_message(&resp.text, cfg.decode.max_words_hint) {
                    Ok(m) => m.text,
                    Err(e) => {
                        errors.push(RunErrorRecord {
                            trial: t,
                            role: Role::Speaker,
                            message: e,
                            fatal: false,
                        });
                        resp.text.trim().to_string()
                    }
                }
            }
        };

        let history: &[TrialRecord] = match self.lv.history_policy {
            HistoryPolicy::Full => records,
            HistoryPolicy::None => &[],
        };
        let prompt = build_prompt(&PromptRequest {
            variant: &self.lv,
            templates: &cfg.templates,
            images: &cfg.interaction.context_images,
            history,
            current: CurrentTrial {
                trial_index: t,
                context: &view,
                stimulus: Stimulus::Message(&message),
            },
            role: Role::Listener,
            seed: self.seed,
            grid: cfg.grid,
        })
        .map_err(|e| Stop::Agent(Role::Listener, e.to_string()))?;
        let call = Call {
            role: Role::Listener,
            trial_index: t,
            prompt: &prompt,
            labels: &view.labels,
            message: Some(&message),
            history,
            decode: cfg.decode,
        };
        let resp = complete(self.listener.as_mut(), &call).map_err(|e| Stop::Agent(Role::Listener, e.to_string()))?;
        io.listener_raw = resp.text.clone();
        io.listener_latency_ms = resp.latency_ms;
        let selection = parse_listener_choice(&resp.text, &view.labels);
        let gold = view.label_of(&target).unwrap_or_default().to_string();
        let feedback = cfg.templates.feedback(&selection, &gold, cfg.variant.model_role());
        Ok((
            TrialRecord {
                trial_index: t,
                repetition: crate::model::repetition_of(t),
                context: view,
                target_id: target,
                speaker_message: message,
                listener_selection: selection,
                feedback_text: feedback,
                raw_agent_output: resp.text,
                extra: Default::default(),
            },
            io,
        ))
    }
}

/// Trials already on disk for this run, or `None` to start fresh.
fn resume_from(path: &Path, run_id: &str) -> Result<Option<Transcript>, EngineError> {
    if !path.exists() {
        return Ok(None);
    }
    let t = read_transcript(path)?;
    if t.run_id != run_id {
        return Err(EngineError::Config(format!(
            "{} holds run {}, not {run_id}; choose another output path",
            path.display(),
            t.run_id
        )));
    }
    Ok(Some(t))
}

/// Play one game. Configuration problems and capability refusals are
/// errors; an agent failure mid-game yields a partial transcript.
pub fn run_interaction(cfg: &RunConfig) -> Result<Transcript, EngineError> {
    cfg.check()?;
    let run_id = cfg.run_id();
    let snapshot = cfg.snapshot();
    let seed = snapshot.interaction_seed;
    let canonical = cfg.interaction.image_ids();
    let lv = Variant::new(cfg.listener_variant(), &cfg.templates);
    let sv = Variant::new(cfg.speaker_variant(), &cfg.templates);

    let mut records: Vec<TrialRecord> = Vec::with_capacity(TRIALS);
    let mut ios: Vec<TrialIo> = Vec::with_capacity(TRIALS);
    let mut errors: Vec<RunErrorRecord> = Vec::new();
    if let Some(path) = &cfg.output {
        if let Some(prev) = resume_from(path, &run_id)? {
            if prev.is_complete() {
                return Ok(Transcript {
                    interaction: Interaction {
                        context_images: cfg.interaction.context_images.clone(),
                        ..prev.interaction
                    },
                    ..prev
                });
            }
            log::info!("resuming {} after trial {}", path.display(), prev.interaction.trials.len());
            records = prev.interaction.trials;
            ios = prev.io;
        }
    }
    let mut writer = cfg.output.as_deref().map(TranscriptWriter::create).transpose()?;
    let mut emit = |line: &Line| -> Result<(), EngineError> {
        if let Some(w) = writer.as_mut() {
            w.write(line)?;
        }
        Ok(())
    };
    emit(&Line::Header(Header {
        run_id: run_id.clone(),
        config: snapshot.clone(),
        image_ids: canonical.clone(),
    }))?;
    for (r, i) in records.iter().zip(&ios) {
        emit(&Line::Trial(TrialLine::new(r, i)))?;
    }

    let gold_labels: Vec<String> = (1..=TRIALS)
        .map(|t| {
            let target = &cfg.interaction.trials[t - 1].target_id;
            gold_view(cfg, &lv, &canonical, t, seed)
                .label_of(target)
                .unwrap_or_default()
                .to_string()
        })
        .collect();
    let env = AgentEnv {
        interaction: &cfg.interaction,
        gold_labels: &gold_labels,
        adapters_dir: &cfg.adapters_dir,
    };
    let speaker = if cfg.speaker.is_replay() {
        None
    } else {
        Some(cfg.speaker.instantiate(&env).map_err(EngineError::Agent)?)
    };
    let listener = cfg.listener.instantiate(&env).map_err(EngineError::Agent)?;
    let mut game = Game {
        cfg,
        seed,
        sv,
        lv,
        canonical,
        speaker,
        listener,
    };

    let mut status = RunStatus::Complete;
    for t in records.len() + 1..=TRIALS {
        let mut soft = Vec::new();
        let outcome = game.trial(t, &records, &mut soft);
        for e in soft {
            log::warn!("{} trial {t}: {}", cfg.interaction.id, e.message);
            emit(&Line::Error(e.clone()))?;
            errors.push(e);
        }
        match outcome {
            Ok((rec, io)) => {
                emit(&Line::Trial(TrialLine::new(&rec, &io)))?;
                records.push(rec);
                ios.push(io);
            }
            Err(Stop::Agent(role, message)) => {
                log::error!("{} trial {t}: {role} failed: {message}", cfg.interaction.id);
                let e = RunErrorRecord {
                    trial: t,
                    role,
                    message,
                    fatal: true,
                };
                emit(&Line::Error(e.clone()))?;
                errors.push(e);
                status = RunStatus::Partial;
                break;
            }
        }
    }
    emit(&Line::Footer(Footer {
        status,
        trials: records.len(),
    }))?;
    Ok(Transcript {
        run_id,
        config: snapshot,
        interaction: Interaction {
            id: cfg.interaction.id.clone(),
            context_images: cfg.interaction.context_images.clone(),
            trials: records,
            source: InteractionSource::Generated,
        },
        io: ios,
        errors,
        status,
    })
}

/// Outcome counts of a batch.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BatchSummary {
    pub complete: usize,
    pub partial: usize,
    /// (interaction id, error) of games that never started.
    pub failed: Vec<(String, String)>,
}

impl BatchSummary {
    pub fn all_complete(&self) -> bool {
        self.partial == 0 && self.failed.is_empty()
    }
}

pub struct BatchResult {
    /// One entry per config, in config order.
    pub results: Vec<Result<Transcript, EngineError>>,
    pub summary: BatchSummary,
}

/// Play every config with at most `jobs` games at once. A failing game does
/// not stop the others.
pub fn run_batch(configs: &[RunConfig], jobs: usize) -> BatchResult {
    let jobs = jobs.max(1).min(configs.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<Transcript, EngineError>>>> =
        Mutex::new((0..configs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(cfg) = configs.get(k) else { break };
                let r = run_interaction(cfg);
                slots.lock().expect("result slots")[k] = Some(r);
            });
        }
    });
    let results: Vec<_> = slots
        .into_inner()
        .expect("result slots")
        .into_iter()
        .map(|r| r.expect("every config ran"))
        .collect();
    let mut summary = BatchSummary::default();
    for (cfg, r) in configs.iter().zip(&results) {
        match r {
            Ok(t) if t.is_complete() => summary.complete += 1,
            Ok(_) => summary.partial += 1,
            Err(e) => summary.failed.push((cfg.interaction.id.clone(), e.to_string())),
        }
    }
    BatchResult { results, summary }
}
