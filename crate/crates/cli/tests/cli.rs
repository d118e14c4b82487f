use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_icca");

fn icca(cwd: &Path, args: &[&str]) -> (i32, String) {
    let out = Command::new(BIN).args(args).current_dir(cwd).output().expect("spawn icca");
    let text = format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
    (out.status.code().unwrap_or(-1), text)
}

fn ok(cwd: &Path, args: &[&str]) -> String {
    let (code, text) = icca(cwd, args);
    assert_eq!(code, 0, "icca {}: {text}", args.join(" "));
    text
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn run_writes_config_transcripts_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    ok(cwd, &["run", "--synthetic", "converging", "--count", "3", "--listener", "scripted:perfect", "--out", "r"]);
    let cfg = json(&cwd.join("r/config.json"));
    assert_eq!(cfg["variant"], "L3");
    assert_eq!(cfg["listener"], "scripted:perfect");
    let manifest = json(&cwd.join("r/run_manifest.json"));
    assert_eq!(manifest["summary"]["complete"], 3);
    assert_eq!(fs::read_dir(cwd.join("r/transcripts")).unwrap().count(), 3);
}

#[test]
fn flags_beat_overrides_beat_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    fs::write(cwd.join("run.toml"), "variant = \"L1\"\nsynthetic = \"random\"\nsynthetic_count = 1\njobs = 2\n").unwrap();
    ok(cwd, &["run", "--config", "run.toml", "--set", "jobs=3", "--set", "variant=L4", "--variant", "L3", "--out", "r"]);
    let cfg = json(&cwd.join("r/config.json"));
    assert_eq!(cfg["variant"], "L3");
    assert_eq!(cfg["jobs"], 3);
}

#[test]
fn configuration_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    let (code, text) = icca(cwd, &["run", "--synthetic", "random", "--set", "colour=blue"]);
    assert_eq!(code, 2, "{text}");
    assert!(text.contains("colour"), "{text}");
    assert_eq!(icca(cwd, &["run", "--out", "r"]).0, 2);
    assert_eq!(icca(cwd, &["run", "--synthetic", "random", "--listener", "replay"]).0, 2);
    assert_eq!(icca(cwd, &["score", "nothing-here"]).0, 2);
}

#[test]
fn agent_failure_is_partial_and_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    fs::create_dir(cwd.join("adapters")).unwrap();
    fs::write(
        cwd.join("adapters/down.json"),
        r#"{"name": "down", "endpoint": "http://127.0.0.1:1/v1/chat", "model": "m",
            "max_images": 20, "request_shape": "openai_chat", "retry_base_ms": 1}"#,
    )
    .unwrap();
    let (code, text) = icca(cwd, &["run", "--synthetic", "random", "--count", "1", "--listener", "adapter:down", "--out", "r"]);
    assert_eq!(code, 1, "{text}");
    let manifest = json(&cwd.join("r/run_manifest.json"));
    assert_eq!(manifest["summary"]["partial"], 1);
    assert_eq!(icca(cwd, &["score", "r"]).0, 2, "partial-only runs have nothing to score");
}

#[test]
fn score_and_report_produce_csv_and_charts() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    for (out, listener) in [("good", "scripted:perfect"), ("mem", "scripted:memorizer")] {
        ok(cwd, &["run", "--synthetic", "converging", "--count", "4", "--listener", listener, "--out", out]);
        ok(cwd, &["score", out, "--resamples", "200"]);
    }
    let csv = fs::read_to_string(cwd.join("good/metrics.csv")).unwrap();
    assert!(csv.starts_with("metric,repetition,mean,ci_low,ci_high,n,excluded_pairs"), "{csv}");
    assert!(csv.lines().any(|l| l.starts_with("ACCURACY,6,1.0")), "{csv}");
    ok(cwd, &["report", "good/metrics.csv", "mem/metrics.csv", "--out", "report"]);
    for chart in ["accuracy", "length", "wnr", "wnd", "similarity"] {
        let svg = fs::read_to_string(cwd.join(format!("report/{chart}.svg"))).unwrap();
        assert!(svg.starts_with("<svg"), "{chart}");
        assert_eq!(svg.matches("class=\"xtick\"").count(), 6, "{chart}");
    }
    let summary = fs::read_to_string(cwd.join("report/summary.md")).unwrap();
    assert!(summary.contains("good") && summary.contains("mem"), "{summary}");
    assert_eq!(icca(cwd, &["report", "missing.csv", "--out", "r2"]).0, 2);
}

#[test]
fn corpus_can_be_scored_directly() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    ok(cwd, &["import", "--synthetic", "converging", "--count", "3", "--out", "corpus"]);
    ok(cwd, &["score", "--corpus", "corpus/manifest.json", "--out", "human", "--resamples", "100"]);
    let csv = fs::read_to_string(cwd.join("human/metrics.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("LENGTH,1,")), "{csv}");
}

#[test]
fn raw_logs_import_and_validate() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    ok(cwd, &["import", "--synthetic", "random", "--count", "1", "--out", "seed"]);
    fs::create_dir(cwd.join("imgs")).unwrap();
    let ids = ["cat", "dog", "owl", "fox"];
    for (k, id) in ids.iter().enumerate() {
        fs::copy(
            cwd.join(format!("seed/images/synthetic-random-0/synthetic-random-0-img{}.png", k + 1)),
            cwd.join(format!("imgs/{id}.png")),
        )
        .unwrap();
    }
    let mut csv = String::from("gameid,trialNum,target,context,text,clicked\n");
    for t in 1..=24 {
        let target = ids[(t + (t - 1) / 4) % 4];
        csv.push_str(&format!("g7,{t},{target},cat;dog;owl;fox,the {target},{target}\n"));
    }
    fs::write(cwd.join("messages.csv"), csv).unwrap();
    fs::write(
        cwd.join("mapping.toml"),
        "messages_file = \"messages.csv\"\nimages_dir = \"imgs\"\n\n[columns]\ninteraction = \"gameid\"\n\
         trial = \"trialNum\"\ntarget = \"target\"\ncontext = \"context\"\nmessage = \"text\"\nselection = \"clicked\"\n",
    )
    .unwrap();
    ok(cwd, &["import", "--raw", ".", "--mapping", "mapping.toml", "--out", "corpus"]);
    ok(cwd, &["validate", "--corpus", "corpus/manifest.json"]);

    let trials = cwd.join("corpus/trials/g7.jsonl");
    let text = fs::read_to_string(&trials).unwrap();
    fs::write(&trials, text.lines().take(23).collect::<Vec<_>>().join("\n") + "\n").unwrap();
    let (code, out) = icca(cwd, &["validate", "--corpus", "corpus/manifest.json"]);
    assert_eq!(code, 1, "{out}");
    assert!(out.contains("g7"), "{out}");
}
