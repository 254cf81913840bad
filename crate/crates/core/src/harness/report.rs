//! CSV, JSONL and SVG reports of a metrics log.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use num_traits::ToPrimitive;

use super::metrics::{EpochRecord, MetricsLog};
use super::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ReportFormat {
    Csv,
    Jsonl,
    Svg,
}

/// Column order of `metrics.csv`. `active_counts` is `a/n` per layer joined by `;`.
pub const CSV_HEADER: [&str; 12] = [
    "branch",
    "epoch",
    "train_accuracy",
    "test_accuracy",
    "mean_loss",
    "active_counts",
    "emergence_exact",
    "emergence_log",
    "relative_emergence",
    "param_total",
    "param_unmasked",
    "sparsity",
];

fn float_text(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        v.to_string()
    }
}

pub fn write_csv(log: &MetricsLog, path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(CSV_HEADER).map_err(|e| csv_error(path, e))?;
    for r in &log.records {
        let counts: Vec<String> = r.active_counts.layers().iter().map(|c| format!("{}/{}", c.active, c.total)).collect();
        w.write_record([
            r.branch.clone(),
            r.epoch.to_string(),
            float_text(r.train_accuracy),
            float_text(r.test_accuracy),
            float_text(r.mean_loss),
            counts.join(";"),
            r.emergence_exact.to_str_radix(10),
            float_text(r.emergence_log),
            float_text(r.relative_emergence),
            r.param_total.to_string(),
            r.param_unmasked.to_string(),
            float_text(r.sparsity),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> HarnessError {
    HarnessError::io(path, std::io::Error::other(e))
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

struct Series {
    label: String,
    color: &'static str,
    dashed: bool,
    points: Vec<(f64, f64)>,
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn tick_text(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-3) {
        format!("{v:.2e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Line chart with linear axes; non-finite points are skipped.
fn line_chart(title: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h) = (760.0, 440.0);
    let (left, right, top, bottom) = (80.0, 170.0, 40.0, 50.0);
    let finite: Vec<(f64, f64)> =
        series.iter().flat_map(|s| s.points.iter().copied()).filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
    let (mut x0, mut x1, mut y0, mut y1) = finite.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), &(x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
    );
    if finite.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let pw = w - left - right;
    let ph = h - top - bottom;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

    let mut out = String::new();
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, left + pw / 2.0, escape(title));
    let _ = writeln!(
        out,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=5 {
        let t = i as f64 / 5.0;
        let xv = x0 + t * (x1 - x0);
        let yv = y0 + t * (y1 - y0);
        let _ = writeln!(
            out,
            r##"<line x1="{0:.2}" y1="{1}" x2="{0:.2}" y2="{2}" stroke="#ddd"/><text x="{0:.2}" y="{3}" text-anchor="middle">{4}</text>"##,
            sx(xv),
            top,
            top + ph,
            top + ph + 18.0,
            tick_text(xv)
        );
        let _ = writeln!(
            out,
            r##"<line x1="{0}" y1="{1:.2}" x2="{2}" y2="{1:.2}" stroke="#ddd"/><text x="{3}" y="{4:.2}" text-anchor="end">{5}</text>"##,
            left,
            sy(yv),
            left + pw,
            left - 6.0,
            sy(yv) + 4.0,
            tick_text(yv)
        );
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">epoch</text>"#, left + pw / 2.0, h - 10.0);
    let _ = writeln!(
        out,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
        top + ph / 2.0,
        escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        if !pts.is_empty() {
            let _ = writeln!(
                out,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.8"{dash} points="{}"/>"#,
                s.color,
                pts.join(" ")
            );
        }
        let ly = top + 14.0 + 18.0 * i as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="2"{dash}/><text x="{}" y="{}">{}</text>"#,
            lx + 22.0,
            s.color,
            lx + 28.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn log10_one_plus(r: &EpochRecord) -> f64 {
    match r.emergence_exact.to_f64() {
        Some(e) if e.is_finite() => e.ln_1p() / std::f64::consts::LN_10,
        _ => r.emergence_log / std::f64::consts::LN_10,
    }
}

fn per_branch(log: &MetricsLog, dashed: bool, suffix: &str, f: impl Fn(&EpochRecord) -> f64) -> Vec<Series> {
    log.branch_names()
        .into_iter()
        .enumerate()
        .map(|(i, b)| Series {
            label: format!("{b}{suffix}"),
            color: PALETTE[i % PALETTE.len()],
            dashed,
            points: log.branch_records(b).map(|r| (r.epoch as f64, f(r))).collect(),
        })
        .collect()
}

/// `emergence.svg`, `relative_emergence.svg` and `accuracy.svg`.
pub fn svg_charts(log: &MetricsLog) -> Vec<(&'static str, String)> {
    let emergence = line_chart("Emergence vs epoch", "log10(1 + E)", &per_branch(log, false, "", log10_one_plus));
    let relative =
        line_chart("Relative emergence vs epoch", "E / unmasked parameters", &per_branch(log, false, "", |r| r.relative_emergence));
    let mut acc = per_branch(log, false, " test", |r| r.test_accuracy);
    acc.extend(per_branch(log, true, " train", |r| r.train_accuracy));
    let accuracy = line_chart("Accuracy vs epoch (solid test, dashed train)", "accuracy", &acc);
    vec![("emergence.svg", emergence), ("relative_emergence.svg", relative), ("accuracy.svg", accuracy)]
}

/// Writes the report files for `format` into `dir` and returns their paths.
pub fn emit_report(log: &MetricsLog, format: ReportFormat, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    if log.is_empty() {
        return Err(HarnessError::Config("metrics log has no epoch records".into()));
    }
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    match format {
        ReportFormat::Csv => {
            let path = dir.join("metrics.csv");
            write_csv(log, &path)?;
            Ok(vec![path])
        }
        ReportFormat::Jsonl => {
            let path = dir.join("metrics.jsonl");
            fs::write(&path, log.to_jsonl()?).map_err(|e| HarnessError::io(&path, e))?;
            Ok(vec![path])
        }
        ReportFormat::Svg => svg_charts(log)
            .into_iter()
            .map(|(name, text)| {
                let path = dir.join(name);
                fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;
                Ok(path)
            })
            .collect(),
    }
}
