//! Editable prompt text.
//!
//! Every piece of wording the harness emits is a named template. Defaults
//! ship under `templates/` (letter labels) and `templates/grid/` (2x2 grid
//! position labels, overriding the letter set). A directory of `.txt` files
//! with the same names overrides any subset.
//!
//! Placeholders: `{trial}`, `{label}`, `{message}`. `{{` and `}}` are literal
//! braces. One trailing newline is stripped from each file.

use std::collections::BTreeMap;
use std::path::Path;

use crate::model::{Role, Selection};

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("template {name}: unknown placeholder {{{placeholder}}}")]
    UnknownPlaceholder { name: String, placeholder: String },
    #[error("template {name}: missing required placeholder {{{placeholder}}}")]
    MissingPlaceholder { name: String, placeholder: String },
    #[error("template {name}: unbalanced brace")]
    Unbalanced { name: String },
    #[error("unknown template file {0}")]
    UnknownTemplate(String),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// (name, allowed placeholders, required placeholders)
const SPECS: &[(&str, &[&str], &[&str])] = &[
    ("instruction_s1", &[], &[]),
    ("instruction_s2", &[], &[]),
    ("instruction_s3", &[], &[]),
    ("instruction_s4", &[], &[]),
    ("instruction_listener", &[], &[]),
    ("listener_trial", &["trial"], &[]),
    ("speaker_trial", &["trial", "label"], &["label"]),
    ("image_line", &["label"], &["label"]),
    ("grid_intro", &[], &[]),
    ("question", &["message", "trial"], &["message"]),
    ("speaker_message", &["message", "trial"], &["message"]),
    ("listener_answer", &["label"], &["label"]),
    ("feedback_listener_correct", &["label", "trial"], &["label"]),
    ("feedback_listener_wrong", &["label", "trial"], &["label"]),
    ("feedback_speaker_correct", &["label", "trial"], &["label"]),
    ("feedback_speaker_wrong", &["label", "trial"], &["label"]),
    ("feedback_speaker_invalid", &["label", "trial"], &["label"]),
];

macro_rules! builtin {
    ($dir:literal, $($name:literal),*) => {
        &[$(($name, include_str!(concat!("../../templates/", $dir, $name, ".txt")))),*]
    };
}

const LETTER_DEFAULTS: &[(&str, &str)] = builtin!(
    "",
    "instruction_s1",
    "instruction_s2",
    "instruction_s3",
    "instruction_s4",
    "instruction_listener",
    "listener_trial",
    "speaker_trial",
    "image_line",
    "grid_intro",
    "question",
    "speaker_message",
    "listener_answer",
    "feedback_listener_correct",
    "feedback_listener_wrong",
    "feedback_speaker_correct",
    "feedback_speaker_wrong",
    "feedback_speaker_invalid"
);

const GRID_OVERRIDES: &[(&str, &str)] = builtin!(
    "grid/",
    "instruction_s1",
    "instruction_s2",
    "instruction_s3",
    "instruction_s4",
    "instruction_listener",
    "speaker_trial",
    "grid_intro",
    "listener_answer",
    "feedback_listener_correct",
    "feedback_listener_wrong",
    "feedback_speaker_correct",
    "feedback_speaker_wrong",
    "feedback_speaker_invalid"
);

/// A validated set of all named templates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    texts: BTreeMap<String, String>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::letters()
    }
}

impl TemplateSet {
    /// Built-in wording with letter labels ("Image B").
    pub fn letters() -> Self {
        let texts = LETTER_DEFAULTS
            .iter()
            .map(|(k, v)| (k.to_string(), strip_newline(v).to_string()))
            .collect();
        let set = Self { texts };
        set.validate().expect("built-in templates are valid");
        set
    }

    /// Built-in wording for a merged 2x2 grid ("the top left image").
    pub fn grid() -> Self {
        let mut set = Self::letters();
        for (k, v) in GRID_OVERRIDES {
            set.texts.insert(k.to_string(), strip_newline(v).to_string());
        }
        set.validate().expect("built-in grid templates are valid");
        set
    }

    /// `base` with every `<name>.txt` in `dir` overriding the template of
    /// that name. Unknown file names are rejected.
    pub fn load_dir(base: TemplateSet, dir: &Path) -> Result<Self, TemplateError> {
        let mut set = base;
        let io = |source| TemplateError::Io {
            path: dir.display().to_string(),
            source,
        };
        let mut entries: Vec<_> = std::fs::read_dir(dir).map_err(io)?.collect::<Result<_, _>>().map_err(io)?;
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            if !SPECS.iter().any(|(n, _, _)| *n == name) {
                return Err(TemplateError::UnknownTemplate(path.display().to_string()));
            }
            let text = std::fs::read_to_string(&path).map_err(|source| TemplateError::Io {
                path: path.display().to_string(),
                source,
            })?;
            set.texts.insert(name, strip_newline(&text).to_string());
        }
        set.validate()?;
        Ok(set)
    }

    /// Override one template after validating it.
    pub fn set(&mut self, name: &str, text: &str) -> Result<(), TemplateError> {
        let spec = SPECS
            .iter()
            .find(|(n, _, _)| *n == name)
            .ok_or_else(|| TemplateError::UnknownTemplate(name.to_string()))?;
        check_placeholders(spec, text)?;
        self.texts.insert(name.to_string(), text.to_string());
        Ok(())
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        for spec in SPECS {
            let text = self
                .texts
                .get(spec.0)
                .ok_or_else(|| TemplateError::UnknownTemplate(spec.0.to_string()))?;
            check_placeholders(spec, text)?;
        }
        Ok(())
    }

    /// Stable fingerprint of every template text.
    pub fn digest(&self) -> String {
        let parts: Vec<&str> = self.texts.iter().flat_map(|(k, v)| [k.as_str(), v.as_str()]).collect();
        crate::seed::fingerprint(&parts)
    }

    pub fn raw(&self, name: &str) -> &str {
        self.texts.get(name).map(String::as_str).unwrap_or_default()
    }

    /// Fill `name` with the given placeholder values.
    pub fn render(&self, name: &str, vars: &[(&str, &str)]) -> String {
        fill(self.raw(name), vars)
    }

    /// Feedback line for a finished trial, phrased for `role`. An invalid
    /// selection counts as wrong and is reported with the gold label.
    pub fn feedback(&self, selection: &Selection, gold_label: &str, role: Role) -> String {
        let correct = selection.label() == Some(gold_label);
        let (name, label) = match (role, selection) {
            (Role::Listener, _) if correct => ("feedback_listener_correct", gold_label),
            (Role::Listener, _) => ("feedback_listener_wrong", gold_label),
            (Role::Speaker, _) if correct => ("feedback_speaker_correct", gold_label),
            (Role::Speaker, Selection::Label(chosen)) => ("feedback_speaker_wrong", chosen.as_str()),
            (Role::Speaker, Selection::Invalid) => ("feedback_speaker_invalid", gold_label),
        };
        self.render(name, &[("label", label)])
    }
}

/// Feedback with the default letter templates.
pub fn render_feedback(selection: &Selection, gold_label: &str, role: Role) -> String {
    TemplateSet::letters().feedback(selection, gold_label, role)
}

fn strip_newline(s: &str) -> &str {
    s.strip_suffix("\r\n").or_else(|| s.strip_suffix('\n')).unwrap_or(s)
}

enum Piece<'a> {
    Lit(&'a str),
    Var(&'a str),
}

fn pieces(text: &str) -> Option<Vec<Piece<'_>>> {
    let mut out = Vec::new();
    let mut rest = text;
    while !rest.is_empty() {
        if let Some(r) = rest.strip_prefix("{{") {
            out.push(Piece::Lit("{"));
            rest = r;
        } else if let Some(r) = rest.strip_prefix("}}") {
            out.push(Piece::Lit("}"));
            rest = r;
        } else if let Some(r) = rest.strip_prefix('{') {
            let end = r.find('}')?;
            out.push(Piece::Var(&r[..end]));
            rest = &r[end + 1..];
        } else if rest.starts_with('}') {
            return None;
        } else {
            let end = rest.find(['{', '}']).unwrap_or(rest.len());
            out.push(Piece::Lit(&rest[..end]));
            rest = &rest[end..];
        }
    }
    Some(out)
}

fn check_placeholders(spec: &(&str, &[&str], &[&str]), text: &str) -> Result<(), TemplateError> {
    let (name, allowed, required) = spec;
    let parts = pieces(text).ok_or_else(|| TemplateError::Unbalanced { name: name.to_string() })?;
    let used: Vec<&str> = parts
        .iter()
        .filter_map(|p| match p {
            Piece::Var(v) => Some(*v),
            Piece::Lit(_) => None,
        })
        .collect();
    if let Some(bad) = used.iter().find(|v| !allowed.contains(v)) {
        return Err(TemplateError::UnknownPlaceholder {
            name: name.to_string(),
            placeholder: bad.to_string(),
        });
    }
    if let Some(missing) = required.iter().find(|r| !used.contains(r)) {
        return Err(TemplateError::MissingPlaceholder {
            name: name.to_string(),
            placeholder: missing.to_string(),
        });
    }
    Ok(())
}

fn fill(text: &str, vars: &[(&str, &str)]) -> String {
    let Some(parts) = pieces(text) else {
        return text.to_string();
    };
    let mut out = String::with_capacity(text.len() + 32);
    for p in parts {
        match p {
            Piece::Lit(s) => out.push_str(s),
            Piece::Var(v) => match vars.iter().find(|(k, _)| *k == v) {
                Some((_, val)) => out.push_str(val),
                None => {
                    out.push('{');
                    out.push_str(v);
                    out.push('}');
                }
            },
        }
    }
    out
}
