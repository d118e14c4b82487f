//! Conversion of external message logs into a corpus.
//!
//! The raw layout is one CSV file of utterances plus a directory of image
//! files named `<image id>.<ext>`. A TOML mapping names the columns:
//!
//! ```toml
//! messages_file = "messages.csv"
//! images_dir = "images"
//! image_extension = "png"
//! context_separator = ";"
//! selection_is_label = false
//!
//! [columns]
//! interaction = "gameid"
//! trial = "trialNum"
//! target = "target"
//! context = "context"
//! message = "text"
//! selection = "clicked"
//! ```
//!
//! Several rows with the same interaction and trial are one trial whose
//! message is the rows' text joined by spaces.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{io_err, load_corpus, write_corpus, CorpusError, CorpusManifest};
use crate::model::{
    repetition_of, ContextView, ImageRef, Interaction, InteractionSource, Role, Selection, TrialRecord, TRIALS,
};
use crate::promptkit::render_feedback;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImportColumns {
    pub interaction: Option<String>,
    pub trial: Option<String>,
    pub target: Option<String>,
    pub context: Option<String>,
    pub message: Option<String>,
    pub selection: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImportMapping {
    pub messages_file: PathBuf,
    pub images_dir: PathBuf,
    #[serde(default = "default_extension")]
    pub image_extension: String,
    #[serde(default = "default_separator")]
    pub context_separator: String,
    /// Selections are display labels rather than image ids.
    #[serde(default)]
    pub selection_is_label: bool,
    pub columns: ImportColumns,
}

fn default_extension() -> String {
    "png".into()
}

fn default_separator() -> String {
    ";".into()
}

impl ImportMapping {
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        toml::from_str(&text).map_err(|e| CorpusError::Config(format!("{}: {e}", path.display())))
    }

    fn required(&self) -> Result<[(&'static str, &str); 6], CorpusError> {
        let c = &self.columns;
        fn pick<'a>(name: &'static str, v: &'a Option<String>) -> Result<(&'static str, &'a str), CorpusError> {
            v.as_deref()
                .map(|col| (name, col))
                .ok_or_else(|| CorpusError::Config(format!("required field '{name}' is not mapped to a column")))
        }
        Ok([
            pick("interaction", &c.interaction)?,
            pick("trial", &c.trial)?,
            pick("target", &c.target)?,
            pick("context", &c.context)?,
            pick("message", &c.message)?,
            pick("selection", &c.selection)?,
        ])
    }
}

#[derive(Debug, Default)]
struct RawTrial {
    target: String,
    context: Vec<String>,
    message: Vec<String>,
    selection: String,
}

/// Convert raw logs under `raw_dir` into a corpus under `out_dir` and return
/// its manifest. Importing the same input twice writes identical files.
pub fn import_external(raw_dir: &Path, mapping_path: &Path, out_dir: &Path) -> Result<CorpusManifest, CorpusError> {
    let mapping = ImportMapping::load(mapping_path)?;
    let cols = mapping.required()?;
    let csv_path = raw_dir.join(&mapping.messages_file);
    let mut reader = csv::Reader::from_path(&csv_path).map_err(|e| CorpusError::Io {
        path: csv_path.clone(),
        source: std::io::Error::other(e.to_string()),
    })?;
    let headers = reader
        .headers()
        .map_err(|e| CorpusError::Import(format!("{}: {e}", csv_path.display())))?
        .clone();
    let mut idx = [0usize; 6];
    for (k, (field, col)) in cols.iter().enumerate() {
        idx[k] = headers.iter().position(|h| h == *col).ok_or_else(|| {
            CorpusError::Config(format!("field '{field}' maps to column '{col}', which {} lacks", csv_path.display()))
        })?;
    }

    let mut dyads: BTreeMap<String, BTreeMap<usize, RawTrial>> = BTreeMap::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CorpusError::Import(format!("{}: {e}", csv_path.display())))?;
        let get = |k: usize| rec.get(idx[k]).unwrap_or("").trim();
        let dyad = get(0).to_string();
        let trial: usize = get(1).parse().map_err(|_| CorpusError::Parse {
            path: csv_path.clone(),
            interaction: dyad.clone(),
            line: line + 2,
            message: format!("trial number '{}' is not a positive integer", get(1)),
        })?;
        let context: Vec<String> = get(3)
            .split(mapping.context_separator.as_str())
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        let entry = dyads.entry(dyad.clone()).or_default().entry(trial).or_default();
        if entry.message.is_empty() {
            entry.target = get(2).to_string();
            entry.context = context;
        } else if entry.target != get(2) || entry.context != context {
            return Err(CorpusError::Import(format!(
                "interaction {dyad}, trial {trial}: ambiguous target ({} vs {})",
                entry.target,
                get(2)
            )));
        }
        if !get(4).is_empty() {
            entry.message.push(get(4).to_string());
        }
        if !get(5).is_empty() {
            entry.selection = get(5).to_string();
        }
    }

    let mut interactions = Vec::new();
    for (dyad, trials) in dyads {
        let indices: Vec<usize> = trials.keys().copied().collect();
        if indices != (1..=TRIALS).collect::<Vec<_>>() {
            return Err(CorpusError::Import(format!(
                "interaction {dyad}: expected trials 1..{TRIALS}, found {} trial(s)",
                indices.len()
            )));
        }
        let mut image_ids: Vec<String> = Vec::new();
        let mut records = Vec::with_capacity(TRIALS);
        for (t, raw) in trials {
            if raw.context.iter().filter(|c| **c == raw.target).count() != 1 {
                return Err(CorpusError::Import(format!(
                    "interaction {dyad}, trial {t}: ambiguous target {} for context [{}]",
                    raw.target,
                    raw.context.join(", ")
                )));
            }
            for c in &raw.context {
                if !image_ids.contains(c) {
                    image_ids.push(c.clone());
                }
            }
            let context = ContextView::lettered(raw.context.clone(), true);
            let selection = if raw.selection.is_empty() {
                Selection::Invalid
            } else if mapping.selection_is_label {
                if context.image_at(&raw.selection).is_some() {
                    Selection::Label(raw.selection.clone())
                } else {
                    Selection::Invalid
                }
            } else {
                context
                    .label_of(&raw.selection)
                    .map(|l| Selection::Label(l.to_string()))
                    .unwrap_or(Selection::Invalid)
            };
            let gold = context.label_of(&raw.target).unwrap_or_default().to_string();
            records.push(TrialRecord {
                trial_index: t,
                repetition: repetition_of(t),
                feedback_text: render_feedback(&selection, &gold, Role::Listener),
                context,
                target_id: raw.target,
                speaker_message: raw.message.join(" "),
                listener_selection: selection,
                raw_agent_output: String::new(),
                extra: BTreeMap::new(),
            });
        }
        let images = image_ids
            .iter()
            .map(|id| {
                let p = raw_dir
                    .join(&mapping.images_dir)
                    .join(format!("{id}.{}", mapping.image_extension));
                if p.is_file() {
                    Ok(ImageRef::from_file(id.clone(), p))
                } else {
                    Err(CorpusError::Io {
                        path: p,
                        source: std::io::Error::new(std::io::ErrorKind::NotFound, "image file not found"),
                    })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        interactions.push(Interaction {
            id: dyad,
            context_images: images,
            trials: records,
            source: InteractionSource::HumanCorpus,
        });
    }

    let manifest_path = write_corpus(out_dir, &interactions)?;
    let loaded = load_corpus(&manifest_path)?;
    if let Some(r) = loaded.rejected.first() {
        return Err(CorpusError::Import(format!("interaction {}: {}", r.id, r.problems.join("; "))));
    }
    CorpusManifest::load(&manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgb, RgbImage};

    const MAPPING: &str = r#"
messages_file = "messages.csv"
images_dir = "imgs"

[columns]
interaction = "gameid"
trial = "trialNum"
target = "target"
context = "context"
message = "text"
selection = "clicked"
"#;

    fn raw_dyad(dir: &Path, drop_trial: Option<usize>) {
        fs::create_dir_all(dir.join("imgs")).unwrap();
        let ids = ["cat", "dog", "owl", "fox"];
        for (k, id) in ids.iter().enumerate() {
            RgbImage::from_pixel(4, 4, Rgb([k as u8 * 40, 0, 0]))
                .save(dir.join("imgs").join(format!("{id}.png")))
                .unwrap();
        }
        let mut csv = String::from("gameid,trialNum,target,context,text,clicked\n");
        for t in 1..=TRIALS {
            if Some(t) == drop_trial {
                continue;
            }
            let target = ids[(t * 3) % 4];
            csv.push_str(&format!("g1,{t},{target},cat;dog;owl;fox,the {target} one,\n"));
            csv.push_str(&format!("g1,{t},{target},cat;dog;owl;fox,on the left,{target}\n"));
        }
        fs::write(dir.join("messages.csv"), csv).unwrap();
        fs::write(dir.join("mapping.toml"), MAPPING).unwrap();
    }

    #[test]
    fn imports_one_dyad() {
        let raw = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        raw_dyad(raw.path(), None);
        let m = import_external(raw.path(), &raw.path().join("mapping.toml"), out.path()).unwrap();
        assert_eq!(m.count(), 1);
        let c = load_corpus(&out.path().join("manifest.json")).unwrap();
        let i = &c.interactions[0];
        assert_eq!(i.id, "g1");
        assert_eq!(i.trials.len(), TRIALS);
        let t1 = &i.trials[0];
        assert_eq!(t1.target_id, "fox");
        assert_eq!(t1.speaker_message, "the fox one on the left");
        assert_eq!(t1.listener_selection, Selection::Label("D".into()));
        assert!(i.trials.iter().all(TrialRecord::is_correct));
    }

    #[test]
    fn idempotent() {
        let raw = tempfile::tempdir().unwrap();
        raw_dyad(raw.path(), None);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = import_external(raw.path(), &raw.path().join("mapping.toml"), a.path()).unwrap();
        let mb = import_external(raw.path(), &raw.path().join("mapping.toml"), b.path()).unwrap();
        assert_eq!(ma, mb);
        for f in ["manifest.json", "trials/g1.jsonl", "images/g1/owl.png"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn missing_repetition_names_the_dyad() {
        let raw = tempfile::tempdir().unwrap();
        raw_dyad(raw.path(), Some(9));
        let out = tempfile::tempdir().unwrap();
        let err = import_external(raw.path(), &raw.path().join("mapping.toml"), out.path()).unwrap_err();
        assert!(matches!(err, CorpusError::Import(_)));
        assert!(err.to_string().contains("g1"), "{err}");
    }

    #[test]
    fn unmapped_field_is_a_config_error() {
        let raw = tempfile::tempdir().unwrap();
        raw_dyad(raw.path(), None);
        fs::write(raw.path().join("mapping.toml"), MAPPING.replace("selection = \"clicked\"\n", "")).unwrap();
        let out = tempfile::tempdir().unwrap();
        let err = import_external(raw.path(), &raw.path().join("mapping.toml"), out.path()).unwrap_err();
        assert!(matches!(err, CorpusError::Config(ref m) if m.contains("selection")), "{err}");
    }

    #[test]
    fn conflicting_targets_name_the_trial() {
        let raw = tempfile::tempdir().unwrap();
        raw_dyad(raw.path(), None);
        let p = raw.path().join("messages.csv");
        let mut csv = fs::read_to_string(&p).unwrap();
        csv.push_str("g1,5,cat,cat;dog;owl;fox,extra,\n");
        fs::write(&p, csv).unwrap();
        let out = tempfile::tempdir().unwrap();
        let err = import_external(raw.path(), &raw.path().join("mapping.toml"), out.path()).unwrap_err();
        assert!(err.to_string().contains("trial 5"), "{err}");
    }

    #[test]
    fn target_outside_context_is_ambiguous() {
        let raw = tempfile::tempdir().unwrap();
        raw_dyad(raw.path(), None);
        let p = raw.path().join("messages.csv");
        let csv = fs::read_to_string(&p).unwrap().replace("g1,2,owl,", "g1,2,eel,");
        fs::write(&p, csv).unwrap();
        let out = tempfile::tempdir().unwrap();
        let err = import_external(raw.path(), &raw.path().join("mapping.toml"), out.path()).unwrap_err();
        assert!(err.to_string().contains("trial 2"), "{err}");
    }
}
