//! Transcript JSONL.
//!
//! One file per game: a header line, one line per finished trial, error
//! lines, and a footer once the game stops. Lines are flushed as they are
//! written, so a crash loses at most the trial in flight.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::{AgentSpec, Decode};
use crate::corpus::TrialRow;
use crate::model::{ImageRef, Interaction, InteractionSource, Role, TrialRecord};
use crate::promptkit::VariantName;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RunStatus {
    Complete,
    Partial,
}

/// Resolved settings of one game, as written to the transcript header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSnapshot {
    pub variant: VariantName,
    pub speaker: AgentSpec,
    pub listener: AgentSpec,
    pub interaction_id: String,
    pub master_seed: u64,
    pub interaction_seed: u64,
    pub grid: bool,
    pub decode: Decode,
    /// Fingerprint of the template texts.
    pub templates: String,
}

/// Raw agent traffic of one trial.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialIo {
    /// `None` for replayed messages.
    pub speaker_raw: Option<String>,
    pub listener_raw: String,
    pub speaker_latency_ms: u64,
    pub listener_latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunErrorRecord {
    pub trial: usize,
    pub role: Role,
    pub message: String,
    /// Whether the game stopped here.
    pub fatal: bool,
}

/// A played game.
#[derive(Debug, Clone)]
pub struct Transcript {
    pub run_id: String,
    pub config: RunSnapshot,
    /// Finished trials, in order. Images are unresolved when the transcript
    /// was read back from disk.
    pub interaction: Interaction,
    pub io: Vec<TrialIo>,
    pub errors: Vec<RunErrorRecord>,
    pub status: RunStatus,
}

impl Transcript {
    pub fn is_complete(&self) -> bool {
        self.status == RunStatus::Complete
    }

    /// Fraction of correct listener selections per repetition, for
    /// repetitions with at least one finished trial.
    pub fn accuracy_by_repetition(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for rep in 1..=crate::model::REPETITIONS {
            let trials: Vec<&TrialRecord> = self.interaction.trials.iter().filter(|t| t.repetition == rep).collect();
            if trials.is_empty() {
                break;
            }
            out.push(trials.iter().filter(|t| t.is_correct()).count() as f64 / trials.len() as f64);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Header {
    pub run_id: String,
    pub config: RunSnapshot,
    pub image_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct TrialLine {
    pub presented: bool,
    pub feedback: String,
    pub raw_agent_output: String,
    #[serde(flatten)]
    pub io: TrialIo,
    #[serde(flatten)]
    pub row: TrialRow,
}

impl TrialLine {
    pub fn new(record: &TrialRecord, io: &TrialIo) -> Self {
        Self {
            presented: record.context.presented,
            feedback: record.feedback_text.clone(),
            raw_agent_output: record.raw_agent_output.clone(),
            io: io.clone(),
            row: TrialRow::from_record(record),
        }
    }

    pub fn into_parts(self) -> (TrialRecord, TrialIo) {
        let mut r = self.row.into_record();
        r.context.presented = self.presented;
        r.feedback_text = self.feedback;
        r.raw_agent_output = self.raw_agent_output;
        (r, self.io)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Footer {
    pub status: RunStatus,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub(crate) enum Line {
    Header(Header),
    Trial(TrialLine),
    Error(RunErrorRecord),
    Footer(Footer),
}

#[derive(Debug, thiserror::Error)]
pub enum TranscriptError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}, line {line}: {message}")]
    Format { path: PathBuf, line: usize, message: String },
}

/// Append-only transcript file.
pub(crate) struct TranscriptWriter {
    path: PathBuf,
    out: BufWriter<fs::File>,
}

impl TranscriptWriter {
    pub fn create(path: &Path) -> Result<Self, TranscriptError> {
        let io = |source| TranscriptError::Io {
            path: path.to_path_buf(),
            source,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io)?;
        }
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(fs::File::create(path).map_err(io)?),
        })
    }

    pub fn write(&mut self, line: &Line) -> Result<(), TranscriptError> {
        let mut text = serde_json::to_string(line).expect("transcript line serializes");
        text.push('\n');
        self.out
            .write_all(text.as_bytes())
            .and_then(|_| self.out.flush())
            .map_err(|source| TranscriptError::Io {
                path: self.path.clone(),
                source,
            })
    }
}

/// Read a transcript. A missing footer means the run stopped without
/// finishing and reads as partial; a torn final line is ignored.
pub fn read_transcript(path: &Path) -> Result<Transcript, TranscriptError> {
    let file = fs::File::open(path).map_err(|source| TranscriptError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|source| TranscriptError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    let fmt_err = |line: usize, message: String| TranscriptError::Format {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut header: Option<Header> = None;
    let mut trials = Vec::new();
    let mut io = Vec::new();
    let mut errors = Vec::new();
    let mut status = RunStatus::Partial;
    let last = lines.len();
    for (k, text) in lines.iter().enumerate() {
        if text.trim().is_empty() {
            continue;
        }
        let line: Line = match serde_json::from_str(text) {
            Ok(l) => l,
            Err(_) if k + 1 == last && header.is_some() => break,
            Err(e) => return Err(fmt_err(k + 1, e.to_string())),
        };
        match (line, header.is_some()) {
            (Line::Header(h), false) => header = Some(h),
            (Line::Header(_), true) => return Err(fmt_err(k + 1, "second header".into())),
            (_, false) => return Err(fmt_err(k + 1, "missing header".into())),
            (Line::Trial(t), true) => {
                if t.row.trial != trials.len() + 1 {
                    return Err(fmt_err(k + 1, format!("trial {} out of order", t.row.trial)));
                }
                let (r, i) = t.into_parts();
                trials.push(r);
                io.push(i);
            }
            (Line::Error(e), true) => errors.push(e),
            (Line::Footer(f), true) => status = f.status,
        }
    }
    let header = header.ok_or_else(|| fmt_err(1, "empty transcript".into()))?;
    Ok(Transcript {
        run_id: header.run_id,
        interaction: Interaction {
            id: header.config.interaction_id.clone(),
            context_images: header.image_ids.iter().map(ImageRef::unresolved).collect(),
            trials,
            source: InteractionSource::Generated,
        },
        config: header.config,
        io,
        errors,
        status,
    })
}

/// Every `*.jsonl` transcript directly under `dir`, sorted by file name.
pub fn read_transcript_dir(dir: &Path) -> Result<Vec<Transcript>, TranscriptError> {
    let io = |source| TranscriptError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io)?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "jsonl"));
    paths.sort();
    paths.iter().map(|p| read_transcript(p)).collect()
}
