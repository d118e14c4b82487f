//! Command implementations.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use serde::Serialize;
use serde_json::json;

use icca::agents::{AdapterConfig, AgentEnv};
use icca::corpus::{generate_synthetic, import_external, load_corpus, write_corpus, Profile};
use icca::engine::{read_transcript_dir, run_batch, RunConfig};
use icca::metrics::{
    per_repetition, per_repetition_interactions, write_csv, Metric, MetricSeries, MetricsError, SeriesOptions,
    SeriesPoint, Stoplist, WhitespaceTokenizer, WordVectors,
};
use icca::model::{Interaction, REPETITIONS};
use icca::promptkit::TemplateSet;
use icca::stats::{repeat_preference_experiment, BootstrapSpec, RepeatOptions};

use crate::settings::{parse_override, source_interactions, RunSettings};
use crate::{ImportArgs, Outcome, RepeatArgs, ReportArgs, RunArgs, ScoreArgs, ValidateArgs};

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run_overrides(a: &RunArgs) -> anyhow::Result<Vec<(String, toml::Value)>> {
    let mut out = a
        .overrides
        .iter()
        .map(|s| parse_override(s))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let s = |v: String| toml::Value::String(v);
    let path = |p: &PathBuf| toml::Value::String(p.display().to_string());
    let flags = [
        ("variant", a.variant.map(|v| s(v.to_string()))),
        ("speaker", a.speaker.as_ref().map(|v| s(v.to_string()))),
        ("listener", a.listener.as_ref().map(|v| s(v.to_string()))),
        ("corpus", a.corpus.as_ref().map(path)),
        ("synthetic", a.synthetic.clone().map(s)),
        ("synthetic_count", a.count.map(|n| toml::Value::Integer(n as i64))),
        ("master_seed", a.seed.map(|n| toml::Value::Integer(n as i64))),
        ("out", a.out.as_ref().map(path)),
        ("jobs", a.jobs.map(|n| toml::Value::Integer(n as i64))),
        ("grid", a.grid.then_some(toml::Value::Boolean(true))),
        ("adapters_dir", a.adapters.as_ref().map(path)),
        ("templates_dir", a.templates.as_ref().map(path)),
    ];
    out.extend(flags.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
    Ok(out)
}

pub fn run(a: RunArgs) -> anyhow::Result<Outcome> {
    let settings = RunSettings::resolve(a.config.as_deref(), &run_overrides(&a)?)?;
    let templates = settings.templates()?;
    let interactions = settings.interactions()?;
    let tdir = settings.out.join("transcripts");
    let configs: Vec<RunConfig> = interactions
        .into_iter()
        .map(|i| RunConfig {
            variant: settings.variant,
            speaker: settings.speaker.clone(),
            listener: settings.listener.clone(),
            output: Some(tdir.join(format!("{}.jsonl", i.id))),
            interaction: i,
            master_seed: settings.master_seed,
            grid: settings.grid,
            templates: templates.clone(),
            decode: settings.decode(),
            adapters_dir: settings.adapters_dir.clone(),
        })
        .collect();
    for c in &configs {
        c.check()?;
    }
    fs::create_dir_all(&tdir).with_context(|| format!("creating {}", tdir.display()))?;
    write_json(&settings.out.join("config.json"), &settings)?;

    let batch = run_batch(&configs, settings.jobs);
    let runs: Vec<_> = configs
        .iter()
        .zip(&batch.results)
        .map(|(c, r)| match r {
            Ok(t) => json!({
                "interaction_id": c.interaction.id,
                "run_id": t.run_id,
                "status": t.status,
                "trials": t.interaction.trials.len(),
                "transcript": format!("transcripts/{}.jsonl", c.interaction.id),
                "errors": t.errors.iter().map(|e| format!("trial {}: {} {}", e.trial, e.role, e.message)).collect::<Vec<_>>(),
            }),
            Err(e) => json!({
                "interaction_id": c.interaction.id,
                "status": "FAILED",
                "errors": [e.to_string()],
            }),
        })
        .collect();
    write_json(
        &settings.out.join("run_manifest.json"),
        &json!({ "summary": batch.summary, "runs": runs }),
    )?;
    let s = &batch.summary;
    println!(
        "{} complete, {} partial, {} failed; transcripts in {}",
        s.complete,
        s.partial,
        s.failed.len(),
        tdir.display()
    );
    for (id, e) in &s.failed {
        eprintln!("{id}: {e}");
    }
    Ok(if s.all_complete() { Outcome::Success } else { Outcome::Partial })
}

/// A SIMILARITY series with no values, for scoring without word vectors.
fn empty_series(metric: Metric) -> MetricSeries {
    MetricSeries {
        metric,
        points: (metric.first_repetition()..=REPETITIONS)
            .map(|repetition| SeriesPoint {
                repetition,
                mean: None,
                ci_low: None,
                ci_high: None,
                n: 0,
                excluded_pairs: 0,
            })
            .collect(),
    }
}

/// Every metric's series; SIMILARITY is left empty without word vectors.
fn all_series<F>(compute: F) -> anyhow::Result<Vec<MetricSeries>>
where
    F: Fn(Metric) -> Result<MetricSeries, MetricsError>,
{
    let mut out = Vec::new();
    for m in Metric::ALL {
        match compute(m) {
            Ok(s) => out.push(s),
            Err(MetricsError::NoVectors) => {
                log::warn!("{m}: no word vectors given (--vectors); series left empty");
                out.push(empty_series(m));
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

fn transcript_dir(p: &Path) -> PathBuf {
    let nested = p.join("transcripts");
    if nested.is_dir() {
        nested
    } else {
        p.to_path_buf()
    }
}

pub fn score(a: ScoreArgs) -> anyhow::Result<Outcome> {
    let stoplist = match &a.stoplist {
        Some(p) => Stoplist::from_file(p).with_context(|| format!("reading {}", p.display()))?,
        None => Stoplist::default(),
    };
    let vectors = a.vectors.as_deref().map(WordVectors::load).transpose()?;
    let opts = SeriesOptions {
        tokenizer: &WhitespaceTokenizer,
        stoplist: &stoplist,
        vectors: vectors.as_ref(),
        bootstrap: BootstrapSpec {
            resamples: a.resamples,
            confidence: a.confidence,
            seed: a.seed,
        },
    };
    opts.bootstrap.check()?;

    let (source, out_dir, counts, series) = match (&a.corpus, &a.transcripts) {
        (Some(m), _) => {
            let c = load_corpus(m)?;
            if c.interactions.is_empty() {
                bail!("{} holds no valid interactions", m.display());
            }
            let refs: Vec<&Interaction> = c.interactions.iter().collect();
            (
                m.display().to_string(),
                a.out.clone().unwrap_or_else(|| m.parent().unwrap_or(Path::new(".")).to_path_buf()),
                json!({ "interactions": c.interactions.len(), "rejected": c.rejected.len() }),
                all_series(|m| per_repetition_interactions(m, &refs, &opts))?,
            )
        }
        (None, Some(d)) => {
            let dir = transcript_dir(d);
            let transcripts = read_transcript_dir(&dir)?;
            if transcripts.is_empty() {
                bail!("no transcripts in {}", dir.display());
            }
            let complete = transcripts.iter().filter(|t| t.is_complete()).count();
            if complete == 0 {
                bail!("no complete transcripts in {} ({} partial)", dir.display(), transcripts.len());
            }
            (
                dir.display().to_string(),
                a.out.clone().unwrap_or_else(|| d.clone()),
                json!({ "complete": complete, "partial": transcripts.len() - complete }),
                all_series(|m| per_repetition(m, &transcripts, &opts))?,
            )
        }
        (None, None) => bail!("give a transcript directory or --corpus"),
    };
    fs::create_dir_all(&out_dir)?;
    let csv_path = out_dir.join("metrics.csv");
    let f = fs::File::create(&csv_path).with_context(|| format!("writing {}", csv_path.display()))?;
    write_csv(&series, f)?;
    write_json(
        &out_dir.join("stats.json"),
        &json!({
            "source": source,
            "counts": counts,
            "tokenizer": "whitespace",
            "stoplist": a.stoplist.as_ref().map(|p| p.display().to_string()),
            "vectors": a.vectors.as_ref().map(|p| p.display().to_string()),
            "bootstrap": opts.bootstrap,
            "series": series,
        }),
    )?;
    println!("wrote {} and stats.json", csv_path.display());
    Ok(Outcome::Success)
}

pub fn report(a: ReportArgs) -> anyhow::Result<Outcome> {
    if !a.labels.is_empty() && a.labels.len() != a.inputs.len() {
        bail!("{} labels for {} inputs", a.labels.len(), a.inputs.len());
    }
    let mut named = Vec::new();
    for (k, p) in a.inputs.iter().enumerate() {
        let f = fs::File::open(p).with_context(|| format!("reading {}", p.display()))?;
        let series = icca::metrics::read_csv(f).with_context(|| p.display().to_string())?;
        let label = a.labels.get(k).cloned().unwrap_or_else(|| crate::report::default_label(p));
        named.push((label, series));
    }
    let written = crate::report::write_report(&named, &a.out)?;
    for w in &written.warnings {
        log::warn!("{w}");
    }
    println!("wrote {} charts and summary.md to {}", written.charts, a.out.display());
    Ok(Outcome::Success)
}

pub fn repeat_test(a: RepeatArgs) -> anyhow::Result<Outcome> {
    let interactions = source_interactions(a.corpus.as_deref(), a.synthetic.as_deref(), a.count, a.first_seed)?;
    let env = AgentEnv {
        interaction: &interactions[0],
        gold_labels: &[],
        adapters_dir: &a.adapters,
    };
    let mut agent = a.scorer.instantiate(&env)?;
    let opts = RepeatOptions {
        include_images: !a.text_only,
        ..RepeatOptions::default()
    };
    let report = repeat_preference_experiment(agent.as_mut(), &interactions, &opts)?;
    let value = json!({
        "scorer": a.scorer,
        "interactions": interactions.len(),
        "text_only": a.text_only,
        "logprob": report.logprob,
        "perplexity": report.perplexity,
        "pairs": report.pairs,
    });
    match &a.out {
        Some(p) => write_json(p, &value)?,
        None => println!("{}", serde_json::to_string_pretty(&value)?),
    }
    let show = |p: Option<f64>| p.map_or("undefined (all ties)".to_string(), |p| format!("{p:.3e}"));
    eprintln!(
        "log-probability: {}/{} prefer repetition, p = {}",
        report.logprob.n_positive,
        interactions.len(),
        show(report.logprob.p_value)
    );
    Ok(Outcome::Success)
}

pub fn import(a: ImportArgs) -> anyhow::Result<Outcome> {
    let manifest = match (&a.raw, &a.synthetic) {
        (Some(raw), None) => {
            let mapping = a.mapping.as_ref().ok_or_else(|| anyhow!("--raw needs --mapping"))?;
            import_external(raw, mapping, &a.out)?
        }
        (None, Some(p)) => {
            let profile: Profile = p.parse().map_err(|e: String| anyhow!(e))?;
            let games: Vec<Interaction> =
                (a.first_seed..a.first_seed + a.count).map(|s| generate_synthetic(s, profile)).collect();
            let path = write_corpus(&a.out, &games)?;
            icca::corpus::CorpusManifest::load(&path)?
        }
        _ => bail!("give --raw with --mapping, or --synthetic"),
    };
    println!("wrote {} interactions to {}", manifest.count(), a.out.join("manifest.json").display());
    Ok(Outcome::Success)
}

pub fn validate(a: ValidateArgs) -> anyhow::Result<Outcome> {
    let mut outcome = Outcome::Success;
    let mut checked = false;
    if let Some(m) = &a.corpus {
        checked = true;
        let c = load_corpus(m)?;
        println!("{}: {} valid, {} rejected", m.display(), c.interactions.len(), c.rejected.len());
        for r in &c.rejected {
            println!("  {}:", r.id);
            for p in &r.problems {
                println!("    {p}");
            }
        }
        if !c.rejected.is_empty() {
            outcome = Outcome::Partial;
        }
    }
    if let Some(d) = &a.templates {
        checked = true;
        TemplateSet::load_dir(TemplateSet::letters(), d)?;
        println!("{}: templates ok", d.display());
    }
    for p in &a.adapters {
        checked = true;
        let cfg = AdapterConfig::load(p)?;
        let cap = cfg.capability();
        println!(
            "{}: adapter {} ok (max images {}, scoring {})",
            p.display(),
            cfg.name,
            cap.max_images.map_or("unlimited".to_string(), |n| n.to_string()),
            cap.supports_scoring
        );
    }
    if let Some(p) = &a.config {
        checked = true;
        let s = RunSettings::resolve(Some(p), &[])?;
        s.templates()?;
        println!("{}: run settings ok ({} listener {})", p.display(), s.variant, s.listener);
    }
    if !checked {
        bail!("nothing to validate: give --corpus, --templates, --adapter or --config");
    }
    Ok(outcome)
}
