//! Run settings: a TOML file, then `--set key=value` overrides, then flags.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use serde::{Deserialize, Serialize};

use icca::agents::{AgentSpec, Decode, MAX_WORDS_HINT};
use icca::corpus::{generate_synthetic, load_corpus, Profile};
use icca::model::Interaction;
use icca::promptkit::{TemplateSet, VariantName};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSettings {
    pub variant: VariantName,
    pub speaker: AgentSpec,
    pub listener: AgentSpec,
    /// Corpus manifest to replay.
    pub corpus: Option<PathBuf>,
    /// Synthetic profile used when no corpus is given.
    pub synthetic: Option<String>,
    pub synthetic_count: u64,
    pub synthetic_first_seed: u64,
    /// Restrict the run to these interaction ids.
    pub interactions: Vec<String>,
    pub master_seed: u64,
    pub out: PathBuf,
    pub jobs: usize,
    pub grid: bool,
    pub templates_dir: Option<PathBuf>,
    pub adapters_dir: PathBuf,
    pub temperature: f64,
    pub max_words_hint: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            variant: VariantName::L3,
            speaker: AgentSpec::Replay,
            listener: AgentSpec::Perfect,
            corpus: None,
            synthetic: None,
            synthetic_count: 20,
            synthetic_first_seed: 0,
            interactions: Vec::new(),
            master_seed: 0,
            out: PathBuf::from("runs/latest"),
            jobs: 1,
            grid: false,
            templates_dir: None,
            adapters_dir: PathBuf::from("adapters"),
            temperature: 0.0,
            max_words_hint: MAX_WORDS_HINT,
        }
    }
}

/// Parse `key=value`; the value is read as a TOML value when it parses as
/// one and as a bare string otherwise.
pub fn parse_override(s: &str) -> anyhow::Result<(String, toml::Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| anyhow!("override '{s}' is not of the form key=value"))?;
    let k = k.trim();
    if k.is_empty() {
        bail!("override '{s}' has an empty key");
    }
    let v = v.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {v}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(v.to_string()));
    Ok((k.to_string(), value))
}

impl RunSettings {
    /// Merge the config file (if any) with overrides applied in order.
    /// Unknown keys are errors.
    pub fn resolve(config: Option<&Path>, overrides: &[(String, toml::Value)]) -> anyhow::Result<Self> {
        let mut table = match config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str::<toml::Table>(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        for (k, v) in overrides {
            table.insert(k.clone(), v.clone());
        }
        let s: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| anyhow!("run settings: {}", e.message()))?;
        s.check()?;
        Ok(s)
    }

    pub fn check(&self) -> anyhow::Result<()> {
        if self.jobs == 0 {
            bail!("jobs must be at least 1");
        }
        if self.corpus.is_some() && self.synthetic.is_some() {
            bail!("give either corpus or synthetic, not both");
        }
        if self.corpus.is_none() && self.synthetic.is_none() {
            bail!("no interactions: set corpus (a manifest) or synthetic (a profile)");
        }
        if let Some(p) = &self.synthetic {
            p.parse::<Profile>().map_err(|e| anyhow!(e))?;
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            bail!("temperature must be non-negative");
        }
        Ok(())
    }

    pub fn decode(&self) -> Decode {
        Decode {
            temperature: self.temperature,
            max_words_hint: self.max_words_hint,
        }
    }

    pub fn templates(&self) -> anyhow::Result<TemplateSet> {
        let base = if self.grid { TemplateSet::grid() } else { TemplateSet::letters() };
        match &self.templates_dir {
            Some(dir) => Ok(TemplateSet::load_dir(base, dir)?),
            None => Ok(base),
        }
    }

    pub fn interactions(&self) -> anyhow::Result<Vec<Interaction>> {
        let mut all = source_interactions(self.corpus.as_deref(), self.synthetic.as_deref(), self.synthetic_count, self.synthetic_first_seed)?;
        if !self.interactions.is_empty() {
            for id in &self.interactions {
                if !all.iter().any(|i| &i.id == id) {
                    bail!("interaction {id} is not in the source");
                }
            }
            all.retain(|i| self.interactions.contains(&i.id));
        }
        Ok(all)
    }
}

/// Interactions from a corpus manifest, or freshly generated ones.
pub fn source_interactions(
    corpus: Option<&Path>,
    synthetic: Option<&str>,
    count: u64,
    first_seed: u64,
) -> anyhow::Result<Vec<Interaction>> {
    match (corpus, synthetic) {
        (Some(m), None) => {
            let c = load_corpus(m)?;
            for r in &c.rejected {
                log::warn!("skipping invalid interaction {}: {}", r.id, r.problems.join("; "));
            }
            if c.interactions.is_empty() {
                bail!("{} holds no valid interactions", m.display());
            }
            Ok(c.interactions)
        }
        (None, Some(p)) => {
            let profile: Profile = p.parse().map_err(|e: String| anyhow!(e))?;
            Ok((first_seed..first_seed + count).map(|s| generate_synthetic(s, profile)).collect())
        }
        (Some(_), Some(_)) => bail!("give either a corpus or a synthetic profile, not both"),
        (None, None) => bail!("no interactions: give a corpus manifest or a synthetic profile"),
    }
}
