//! Agents that fill the speaker and listener seats.
//!
//! Every agent implements [`Agent`]. The engine never calls
//! [`Agent::generate`] directly: [`complete`] checks the prompt against the
//! agent's [`Capability`] first, and [`score_text`] does the same for
//! log-probability scoring.

mod http;
mod parse;
mod scripted;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use http::{AdapterConfig, HttpAgent, RequestShape};
pub use parse::{parse_listener_choice, parse_speaker_message, SpeakerMessage, MAX_WORDS_HINT};
pub use scripted::{
    replay_speaker_next, ContentListener, ContentSpeaker, MemorizerListener, PerfectListener, Playbook, PlaybookAgent,
    PlaybookEntry, ReplaySpeaker, ScriptedScorer,
};

use crate::model::{Interaction, Role, TrialRecord, REPLAY_AGENT};
use crate::promptkit::Prompt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capability {
    /// `None` means no limit.
    pub max_images: Option<usize>,
    pub supports_scoring: bool,
    pub supports_images: bool,
}

impl Capability {
    pub const TEXT_ONLY: Capability = Capability {
        max_images: Some(0),
        supports_scoring: false,
        supports_images: false,
    };

    pub const UNLIMITED: Capability = Capability {
        max_images: None,
        supports_scoring: false,
        supports_images: true,
    };

    /// Largest image count accepted in one prompt.
    pub fn image_limit(&self) -> usize {
        if !self.supports_images {
            return 0;
        }
        self.max_images.unwrap_or(usize::MAX)
    }

    /// Error text when a prompt with `images` images is refused.
    pub fn refuse(&self, images: usize) -> Option<String> {
        if images <= self.image_limit() {
            return None;
        }
        Some(if self.supports_images {
            format!("prompt has {images} images but the agent accepts at most {}", self.image_limit())
        } else {
            format!("prompt has {images} images but the agent does not accept images")
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Decode {
    pub temperature: f64,
    pub max_words_hint: usize,
}

impl Default for Decode {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_words_hint: MAX_WORDS_HINT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentResponse {
    pub text: String,
    pub token_logprobs: Option<Vec<(String, f64)>>,
    pub latency_ms: u64,
    /// Provider payload, verbatim.
    pub raw: serde_json::Value,
}

impl AgentResponse {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            token_logprobs: None,
            latency_ms: 0,
            raw: serde_json::Value::Null,
        }
    }
}

/// Total log-probability of a continuation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub logprob: f64,
    pub tokens: usize,
}

impl Score {
    /// An empty continuation scores (0, 0).
    pub fn is_degenerate(&self) -> bool {
        self.tokens == 0
    }

    pub fn perplexity(&self) -> Option<f64> {
        (self.tokens > 0).then(|| (-self.logprob / self.tokens as f64).exp())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("capability: {0}")]
    Capability(String),
    #[error("transport failed after {attempts} attempts: {message}")]
    Transport { attempts: usize, message: String },
    #[error("unexpected response: {0}")]
    Protocol(String),
    #[error("agent configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Script(String),
}

/// One request to an agent.
#[derive(Debug, Clone, Copy)]
pub struct Call<'a> {
    pub role: Role,
    pub trial_index: usize,
    pub prompt: &'a Prompt,
    /// Labels the listener may answer with.
    pub labels: &'a [String],
    /// The speaker's message, on listener calls.
    pub message: Option<&'a str>,
    /// Completed trials of this game. Remote agents see them only through
    /// the prompt; scripted agents may read them directly.
    pub history: &'a [TrialRecord],
    pub decode: Decode,
}

pub trait Agent: Send {
    fn name(&self) -> &str;

    fn capability(&self) -> Capability;

    fn generate(&mut self, call: &Call<'_>) -> Result<AgentResponse, AgentError>;

    /// Log-probabilities of `continuation` after `prefix`, one entry per
    /// token.
    fn token_logprobs(&mut self, prefix: &Prompt, continuation: &str) -> Result<Vec<(String, f64)>, AgentError> {
        let _ = (prefix, continuation);
        Err(AgentError::Capability(format!("{} cannot score text", self.name())))
    }
}

/// Generate a reply after checking the prompt's image count.
pub fn complete(agent: &mut dyn Agent, call: &Call<'_>) -> Result<AgentResponse, AgentError> {
    if let Some(msg) = agent.capability().refuse(call.prompt.image_count()) {
        return Err(AgentError::Capability(format!("{}: {msg}", agent.name())));
    }
    agent.generate(call)
}

/// Sum of token log-probabilities of `continuation` given `prefix`.
pub fn score_text(agent: &mut dyn Agent, prefix: &Prompt, continuation: &str) -> Result<Score, AgentError> {
    let cap = agent.capability();
    if !cap.supports_scoring {
        return Err(AgentError::Capability(format!("{} does not return log-probabilities", agent.name())));
    }
    if let Some(msg) = cap.refuse(prefix.image_count()) {
        return Err(AgentError::Capability(format!("{}: {msg}", agent.name())));
    }
    if continuation.trim().is_empty() {
        return Ok(Score {
            logprob: 0.0,
            tokens: 0,
        });
    }
    let tokens = agent.token_logprobs(prefix, continuation)?;
    Ok(Score {
        logprob: tokens.iter().map(|(_, lp)| lp).sum(),
        tokens: tokens.len(),
    })
}

/// Agent id as written in configs and on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum AgentSpec {
    /// Recorded speaker messages.
    Replay,
    /// Listener that always answers the gold label.
    Perfect,
    /// Listener that matches the message against earlier messages; the
    /// optional playbook answers when no earlier trial matches.
    Memorizer(Option<PathBuf>),
    /// Agent that grounds colour words in the displayed pixels.
    Content,
    Playbook(PathBuf),
    /// Scorer with a per-token log-probability and a bonus for tokens that
    /// already occur in the prefix.
    Scorer { base: f64, repeat_bonus: f64 },
    /// HTTP adapter configured in `<adapters_dir>/<name>.json`.
    Adapter(String),
}

impl FromStr for AgentSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == REPLAY_AGENT {
            return Ok(AgentSpec::Replay);
        }
        if let Some(name) = s.strip_prefix("adapter:") {
            if name.is_empty() || name.contains(['/', '\\']) {
                return Err(format!("bad adapter name in '{s}'"));
            }
            return Ok(AgentSpec::Adapter(name.to_string()));
        }
        let Some(rest) = s.strip_prefix("scripted:") else {
            return Err(format!("unknown agent '{s}' (expected replay, scripted:KIND or adapter:NAME)"));
        };
        let (kind, arg) = match rest.split_once('=') {
            Some((k, a)) => (k, Some(a)),
            None => (rest, None),
        };
        let number = |a: &str| a.parse::<f64>().map_err(|_| format!("bad number '{a}' in '{s}'"));
        match (kind, arg) {
            ("perfect", None) => Ok(AgentSpec::Perfect),
            ("content", None) => Ok(AgentSpec::Content),
            ("memorizer", a) => Ok(AgentSpec::Memorizer(a.map(PathBuf::from))),
            ("playbook", Some(a)) if !a.is_empty() => Ok(AgentSpec::Playbook(PathBuf::from(a))),
            ("scorer", None) => Ok(AgentSpec::Scorer {
                base: -1.0,
                repeat_bonus: 0.0,
            }),
            ("scorer", Some(a)) => {
                let (bonus, base) = match a.split_once(',') {
                    Some((b, base)) => (number(b)?, number(base)?),
                    None => (number(a)?, -1.0),
                };
                Ok(AgentSpec::Scorer {
                    base,
                    repeat_bonus: bonus,
                })
            }
            _ => Err(format!("unknown scripted agent '{s}'")),
        }
    }
}

impl TryFrom<String> for AgentSpec {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<AgentSpec> for String {
    fn from(a: AgentSpec) -> String {
        a.to_string()
    }
}

impl fmt::Display for AgentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgentSpec::Replay => f.write_str(REPLAY_AGENT),
            AgentSpec::Perfect => f.write_str("scripted:perfect"),
            AgentSpec::Memorizer(None) => f.write_str("scripted:memorizer"),
            AgentSpec::Memorizer(Some(p)) => write!(f, "scripted:memorizer={}", p.display()),
            AgentSpec::Content => f.write_str("scripted:content"),
            AgentSpec::Playbook(p) => write!(f, "scripted:playbook={}", p.display()),
            AgentSpec::Scorer { base, repeat_bonus } => write!(f, "scripted:scorer={repeat_bonus},{base}"),
            AgentSpec::Adapter(n) => write!(f, "adapter:{n}"),
        }
    }
}

/// What an agent may be built from for one game.
#[derive(Debug, Clone, Copy)]
pub struct AgentEnv<'a> {
    pub interaction: &'a Interaction,
    /// Gold label of the target on each trial, in trial order.
    pub gold_labels: &'a [String],
    pub adapters_dir: &'a Path,
}

impl AgentSpec {
    pub fn is_replay(&self) -> bool {
        matches!(self, AgentSpec::Replay)
    }

    /// Build a fresh agent for one game.
    pub fn instantiate(&self, env: &AgentEnv<'_>) -> Result<Box<dyn Agent>, AgentError> {
        Ok(match self {
            AgentSpec::Replay => Box::new(ReplaySpeaker::new(env.interaction)),
            AgentSpec::Perfect => Box::new(PerfectListener::new(env.gold_labels.to_vec())),
            AgentSpec::Memorizer(fallback) => {
                let fallback = fallback.as_deref().map(Playbook::load).transpose()?;
                Box::new(MemorizerListener::new(fallback))
            }
            AgentSpec::Content => Box::new(ContentAgent),
            AgentSpec::Playbook(path) => Box::new(PlaybookAgent::new(Playbook::load(path)?)),
            AgentSpec::Scorer { base, repeat_bonus } => Box::new(ScriptedScorer::new(*base, *repeat_bonus)),
            AgentSpec::Adapter(name) => Box::new(HttpAgent::new(AdapterConfig::load_named(env.adapters_dir, name)?)),
        })
    }

    /// Capability without building the agent.
    pub fn capability(&self, adapters_dir: &Path) -> Result<Capability, AgentError> {
        Ok(match self {
            AgentSpec::Adapter(name) => AdapterConfig::load_named(adapters_dir, name)?.capability(),
            AgentSpec::Scorer { .. } => ScriptedScorer::new(0.0, 0.0).capability(),
            _ => Capability::UNLIMITED,
        })
    }
}

/// Dispatches to the content listener or speaker by role.
struct ContentAgent;

impl Agent for ContentAgent {
    fn name(&self) -> &str {
        "scripted:content"
    }

    fn capability(&self) -> Capability {
        Capability::UNLIMITED
    }

    fn generate(&mut self, call: &Call<'_>) -> Result<AgentResponse, AgentError> {
        match call.role {
            Role::Listener => ContentListener.generate(call),
            Role::Speaker => ContentSpeaker.generate(call),
        }
    }
}
