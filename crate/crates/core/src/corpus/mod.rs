//! Recorded interactions on disk.
//!
//! A corpus is a manifest plus, per interaction, one JSONL trials file and a
//! directory of PNG images named by image id:
//!
//! ```text
//! manifest.json     {"version": 1, "interactions": [{"id", "trials_file", "images_dir"}]}
//! trials/<id>.jsonl {"trial", "repetition", "context_ids", "labels", "target_id",
//!                    "message", "selection", "correct", ...}
//! images/<id>/<image id>.png
//! ```
//!
//! Unknown trial keys are kept in [`TrialRecord::extra`]. Feedback text is not
//! stored; it is rendered again on load.

mod import;
mod synthetic;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use import::{import_external, ImportMapping};
pub use synthetic::{colour_name, generate_synthetic, Profile, PALETTE};

use crate::model::{
    validate_interaction, ContextView, ImageLoadError, ImageRef, Interaction, InteractionSource, Role, Selection,
    TrialRecord,
};
use crate::promptkit::render_feedback;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("{path}, interaction {interaction}, line {line}: {message}")]
    Parse {
        path: PathBuf,
        interaction: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Image(#[from] ImageLoadError),
    #[error("import configuration: {0}")]
    Config(String),
    #[error("import: {0}")]
    Import(String),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative to the manifest's directory.
    pub trials_file: PathBuf,
    pub images_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<InteractionSource>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub version: u32,
    pub interactions: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn count(&self) -> usize {
        self.interactions.len()
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| CorpusError::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if m.version != MANIFEST_VERSION {
            return Err(CorpusError::Manifest {
                path: path.to_path_buf(),
                message: format!("unsupported version {} (expected {MANIFEST_VERSION})", m.version),
            });
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text).map_err(io_err(path))
    }
}

/// On-disk form of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: usize,
    pub repetition: usize,
    pub context_ids: Vec<String>,
    pub labels: Vec<String>,
    pub target_id: String,
    pub message: String,
    pub selection: Selection,
    pub correct: bool,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl TrialRow {
    pub fn from_record(r: &TrialRecord) -> Self {
        Self {
            trial: r.trial_index,
            repetition: r.repetition,
            context_ids: r.context.slots.clone(),
            labels: r.context.labels.clone(),
            target_id: r.target_id.clone(),
            message: r.speaker_message.clone(),
            selection: r.listener_selection.clone(),
            correct: r.is_correct(),
            extra: r.extra.clone(),
        }
    }

    /// Record with regenerated listener-side feedback.
    pub fn into_record(self) -> TrialRecord {
        let context = ContextView::new(self.context_ids, self.labels, true);
        let gold = context.label_of(&self.target_id).unwrap_or_default().to_string();
        TrialRecord {
            trial_index: self.trial,
            repetition: self.repetition,
            feedback_text: render_feedback(&self.selection, &gold, Role::Listener),
            context,
            target_id: self.target_id,
            speaker_message: self.message,
            listener_selection: self.selection,
            raw_agent_output: String::new(),
            extra: self.extra,
        }
    }
}

/// An interaction that parsed but broke an invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rejected {
    pub id: String,
    pub problems: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct CorpusLoad {
    pub interactions: Vec<Interaction>,
    pub rejected: Vec<Rejected>,
}

/// Parse one trials file.
pub fn read_trials(path: &Path, interaction_id: &str) -> Result<Vec<TrialRow>, CorpusError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut rows = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: TrialRow = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            path: path.to_path_buf(),
            interaction: interaction_id.to_string(),
            line: k + 1,
            message: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

fn image_path(images_dir: &Path, id: &str) -> PathBuf {
    images_dir.join(format!("{id}.png"))
}

/// Load and validate every interaction in a manifest. Missing or malformed
/// files abort the load; interactions that parse but fail validation are
/// listed in [`CorpusLoad::rejected`].
pub fn load_corpus(manifest_path: &Path) -> Result<CorpusLoad, CorpusError> {
    let manifest = CorpusManifest::load(manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let mut out = CorpusLoad::default();
    for entry in &manifest.interactions {
        let trials_path = root.join(&entry.trials_file);
        let images_dir = root.join(&entry.images_dir);
        let rows = read_trials(&trials_path, &entry.id)?;

        let mut ids: Vec<String> = Vec::new();
        for r in &rows {
            for id in &r.context_ids {
                if !ids.contains(id) {
                    ids.push(id.clone());
                }
            }
        }
        let mut images = Vec::with_capacity(ids.len());
        for id in &ids {
            let p = image_path(&images_dir, id);
            if !p.is_file() {
                return Err(CorpusError::Io {
                    path: p,
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, "image file not found"),
                });
            }
            images.push(ImageRef::from_file(id.clone(), p));
        }

        let mut problems: Vec<String> = Vec::new();
        for r in &rows {
            let record = r.clone().into_record();
            if record.is_correct() != r.correct {
                problems.push(format!("trial {}: recorded correctness disagrees with the selection", r.trial));
            }
        }
        let interaction = Interaction {
            id: entry.id.clone(),
            context_images: images,
            trials: rows.into_iter().map(TrialRow::into_record).collect(),
            source: entry.source.unwrap_or(InteractionSource::HumanCorpus),
        };
        problems.extend(validate_interaction(&interaction).iter().map(|v| v.to_string()));
        for img in &interaction.context_images {
            if let Err(e) = img.pixels() {
                problems.push(e.to_string());
            }
        }
        if problems.is_empty() {
            out.interactions.push(interaction);
        } else {
            log::warn!("rejecting interaction {}: {}", entry.id, problems.join("; "));
            out.rejected.push(Rejected {
                id: entry.id.clone(),
                problems,
            });
        }
    }
    Ok(out)
}

/// JSONL text of an interaction's trials.
pub fn trials_jsonl(interaction: &Interaction) -> String {
    let mut out = String::new();
    for t in &interaction.trials {
        out.push_str(&serde_json::to_string(&TrialRow::from_record(t)).expect("trial row serializes"));
        out.push('\n');
    }
    out
}

/// Write interactions as a corpus under `dir`; returns the manifest path.
pub fn write_corpus(dir: &Path, interactions: &[Interaction]) -> Result<PathBuf, CorpusError> {
    fs::create_dir_all(dir.join("trials")).map_err(io_err(dir))?;
    let mut manifest = CorpusManifest {
        version: MANIFEST_VERSION,
        interactions: Vec::new(),
    };
    for i in interactions {
        let trials_file = PathBuf::from("trials").join(format!("{}.jsonl", i.id));
        let images_dir = PathBuf::from("images").join(&i.id);
        let abs_images = dir.join(&images_dir);
        fs::create_dir_all(&abs_images).map_err(io_err(&abs_images))?;
        for img in &i.context_images {
            let p = image_path(&abs_images, img.id());
            img.pixels()?.save(&p).map_err(|e| CorpusError::Io {
                path: p.clone(),
                source: std::io::Error::other(e.to_string()),
            })?;
        }
        let tp = dir.join(&trials_file);
        let mut f = fs::File::create(&tp).map_err(io_err(&tp))?;
        f.write_all(trials_jsonl(i).as_bytes()).map_err(io_err(&tp))?;
        manifest.interactions.push(ManifestEntry {
            id: i.id.clone(),
            trials_file,
            images_dir,
            source: (i.source != InteractionSource::HumanCorpus).then_some(i.source),
        });
    }
    let mp = dir.join("manifest.json");
    manifest.save(&mp)?;
    Ok(mp)
}
