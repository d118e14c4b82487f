//! SVG line charts and a Markdown summary of metric series.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::Context;

use icca::metrics::{Metric, MetricSeries};
use icca::model::REPETITIONS;

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 560.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 340.0;
const COLOURS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

pub struct ReportOutput {
    pub charts: usize,
    pub warnings: Vec<String>,
}

/// Legend name for a CSV path: its stem, or its directory's name when the
/// stem is the generic `metrics`.
pub fn default_label(p: &Path) -> String {
    let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("series");
    if stem == "metrics" {
        if let Some(dir) = p.parent().and_then(|d| d.file_name()).and_then(|d| d.to_str()) {
            return dir.to_string();
        }
    }
    stem.to_string()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn x_of(rep: usize) -> f64 {
    LEFT + (rep as f64 - 1.0) / (REPETITIONS as f64 - 1.0) * (RIGHT - LEFT)
}

fn y_range(metric: Metric, lines: &[(&str, &MetricSeries)]) -> (f64, f64) {
    if metric == Metric::Accuracy {
        return (0.0, 1.0);
    }
    let values: Vec<f64> = lines
        .iter()
        .flat_map(|(_, s)| s.points.iter())
        .flat_map(|p| [p.mean, p.ci_low, p.ci_high])
        .flatten()
        .filter(|v| v.is_finite())
        .collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let (lo, hi) = if hi - lo < 1e-9 { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

/// Runs of consecutive points that all have a value.
fn runs<T: Copy>(points: &[(usize, Option<T>)]) -> Vec<Vec<(usize, T)>> {
    let mut out: Vec<Vec<(usize, T)>> = Vec::new();
    let mut cur = Vec::new();
    for &(rep, v) in points {
        match v {
            Some(v) => cur.push((rep, v)),
            None if !cur.is_empty() => out.push(std::mem::take(&mut cur)),
            None => {}
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// One chart. Returns the SVG text.
pub fn render_chart(metric: Metric, lines: &[(&str, &MetricSeries)]) -> String {
    let (lo, hi) = y_range(metric, lines);
    let y_of = |v: f64| BOTTOM - (v - lo) / (hi - lo) * (BOTTOM - TOP);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" font-size="14" text-anchor="middle">{metric}</text>"#, (LEFT + RIGHT) / 2.0);
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{BOTTOM}" x2="{RIGHT}" y2="{BOTTOM}" stroke="black"/><line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{BOTTOM}" stroke="black"/>"#
    );
    for rep in 1..=REPETITIONS {
        let x = x_of(rep);
        let _ = writeln!(
            s,
            r#"<g class="xtick"><line x1="{x:.1}" y1="{BOTTOM}" x2="{x:.1}" y2="{}" stroke="black"/><text x="{x:.1}" y="{}" text-anchor="middle">Repetition {rep}</text></g>"#,
            BOTTOM + 5.0,
            BOTTOM + 18.0
        );
    }
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let y = y_of(v);
        let _ = writeln!(
            s,
            r##"<g class="ytick"><line x1="{}" y1="{y:.1}" x2="{LEFT}" y2="{y:.1}" stroke="black"/><line x1="{LEFT}" y1="{y:.1}" x2="{RIGHT}" y2="{y:.1}" stroke="#dddddd"/><text x="{}" y="{:.1}" text-anchor="end">{v:.2}</text></g>"##,
            LEFT - 5.0,
            LEFT - 8.0,
            y + 4.0
        );
    }
    for (k, (label, series)) in lines.iter().enumerate() {
        let colour = COLOURS[k % COLOURS.len()];
        let bands: Vec<(usize, Option<(f64, f64)>)> = series
            .points
            .iter()
            .map(|p| (p.repetition, p.ci_low.zip(p.ci_high)))
            .collect();
        for run in runs(&bands).into_iter().filter(|r| r.len() > 1) {
            let upper = run.iter().map(|(r, (_, h))| format!("{:.1},{:.1}", x_of(*r), y_of(*h)));
            let lower = run.iter().rev().map(|(r, (l, _))| format!("{:.1},{:.1}", x_of(*r), y_of(*l)));
            let pts: Vec<String> = upper.chain(lower).collect();
            let _ = writeln!(
                s,
                r#"<polygon class="ci" points="{}" fill="{colour}" fill-opacity="0.2" stroke="none"/>"#,
                pts.join(" ")
            );
        }
        let means: Vec<(usize, Option<f64>)> = series.points.iter().map(|p| (p.repetition, p.mean)).collect();
        for run in runs(&means) {
            let pts: Vec<String> = run.iter().map(|(r, v)| format!("{:.1},{:.1}", x_of(*r), y_of(*v))).collect();
            let _ = writeln!(
                s,
                r#"<polyline class="series" points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#,
                pts.join(" ")
            );
            for (r, v) in run {
                let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{colour}"/>"#, x_of(r), y_of(v));
            }
        }
        let ly = TOP + 10.0 + 20.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<g class="legend"><line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"/><text x="{}" y="{}">{}</text></g>"#,
            RIGHT + 20.0,
            RIGHT + 45.0,
            RIGHT + 52.0,
            ly + 4.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn summary(named: &[(String, Vec<MetricSeries>)], metrics: &[Metric]) -> String {
    let mut s = String::from("| metric | series |");
    for r in 1..=REPETITIONS {
        let _ = write!(s, " {r} |");
    }
    s.push_str("\n|---|---|");
    s.push_str(&"---|".repeat(REPETITIONS));
    s.push('\n');
    for &m in metrics {
        for (label, series) in named {
            let Some(ser) = series.iter().find(|x| x.metric == m) else { continue };
            let _ = write!(s, "| {m} | {label} |");
            for r in 1..=REPETITIONS {
                match ser.point(r).and_then(|p| p.mean) {
                    Some(v) => {
                        let _ = write!(s, " {v:.3} |");
                    }
                    None => s.push_str(" NA |"),
                }
            }
            s.push('\n');
        }
    }
    s
}

/// One chart per metric present in any input, plus `summary.md`.
pub fn write_report(named: &[(String, Vec<MetricSeries>)], out: &Path) -> anyhow::Result<ReportOutput> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let metrics: Vec<Metric> = Metric::ALL
        .into_iter()
        .filter(|m| named.iter().any(|(_, s)| s.iter().any(|x| x.metric == *m)))
        .collect();
    let mut warnings = Vec::new();
    for &m in &metrics {
        let lines: Vec<(&str, &MetricSeries)> = named
            .iter()
            .filter_map(|(l, s)| s.iter().find(|x| x.metric == m).map(|x| (l.as_str(), x)))
            .collect();
        for (label, ser) in &lines {
            if ser.points.iter().all(|p| p.mean.is_none()) {
                warnings.push(format!("{m} / {label}: no values"));
            } else if ser.points.iter().all(|p| p.ci_low.is_none() || p.ci_high.is_none()) {
                warnings.push(format!("{m} / {label}: no confidence intervals; drawn without bands"));
            }
        }
        let path = out.join(format!("{}.svg", m.to_string().to_lowercase()));
        fs::write(&path, render_chart(m, &lines)).with_context(|| format!("writing {}", path.display()))?;
    }
    let path = out.join("summary.md");
    fs::write(&path, summary(named, &metrics)).with_context(|| format!("writing {}", path.display()))?;
    Ok(ReportOutput {
        charts: metrics.len(),
        warnings,
    })
}
