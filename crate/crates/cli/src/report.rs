//! Static markdown tables and an SVG curve of per-round WER.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

/// One line of `metrics.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub round: usize,
    pub wer_fmp: f64,
    pub wer_baseline: f64,
    pub sub: usize,
    pub ins: usize,
    pub del: usize,
    pub words: usize,
}

pub const METRICS_HEADER: &str = "round,wer_fmp,wer_baseline,sub,ins,del,words";

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header = reader.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != METRICS_HEADER {
        bail!("{}: unexpected header {header:?}", path.display());
    }
    reader
        .deserialize()
        .enumerate()
        .map(|(i, row)| row.with_context(|| format!("{}:{}", path.display(), i + 2)))
        .collect()
}

/// Renders any CSV file as a markdown table.
pub fn csv_to_markdown(path: &Path) -> Result<String> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let mut out = String::new();
    writeln!(out, "| {} |", header.join(" | "))?;
    writeln!(out, "|{}", "---|".repeat(header.len()))?;
    for rec in reader.records() {
        let rec = rec?;
        let cells: Vec<String> = rec.iter().map(format_cell).collect();
        writeln!(out, "| {} |", cells.join(" | "))?;
    }
    Ok(out)
}

fn format_cell(s: &str) -> String {
    match s.parse::<f64>() {
        Ok(v) if s.contains('.') || s.contains('e') => format!("{v:.4}"),
        _ => s.to_string(),
    }
}

pub fn metrics_markdown(rows: &[MetricsRow]) -> String {
    let mut out = String::from("| round | WER (FMP) | WER (baseline) | rel. change | sub | ins | del | words |\n");
    out.push_str("|---|---|---|---|---|---|---|---|\n");
    for r in rows {
        let rel = if r.wer_baseline > 0.0 {
            format!("{:+.2}%", 100.0 * (r.wer_fmp - r.wer_baseline) / r.wer_baseline)
        } else {
            "n/a".into()
        };
        let _ = writeln!(
            out,
            "| {} | {:.2}% | {:.2}% | {rel} | {} | {} | {} | {} |",
            r.round,
            100.0 * r.wer_fmp,
            100.0 * r.wer_baseline,
            r.sub,
            r.ins,
            r.del,
            r.words
        );
    }
    out
}

/// Two polylines, FMP and baseline, over rounds.
pub fn wer_curve_svg(rows: &[MetricsRow]) -> String {
    let (w, h, pad) = (640.0, 360.0, 50.0);
    let values: Vec<f64> = rows.iter().flat_map(|r| [r.wer_fmp, r.wer_baseline]).collect();
    let mut lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        hi = lo + 0.01;
    }
    let margin = 0.1 * (hi - lo);
    let (lo, hi) = ((lo - margin).max(0.0), hi + margin);
    let last = rows.iter().map(|r| r.round).max().unwrap_or(0).max(1) as f64;
    let x = |round: usize| pad + (w - 2.0 * pad) * round as f64 / last;
    let y = |v: f64| h - pad - (h - 2.0 * pad) * (v - lo) / (hi - lo);
    let line = |f: &dyn Fn(&MetricsRow) -> f64| {
        rows.iter()
            .map(|r| format!("{:.1},{:.1}", x(r.round), y(f(r))))
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<line x1="{pad}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{0}" stroke="black"/>"#,
        h - pad,
        w - pad
    );
    for r in rows {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x(r.round),
            h - pad + 18.0,
            r.round
        );
    }
    for i in 0..=4 {
        let v = lo + (hi - lo) * f64::from(i) / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.2}%</text>"#,
            pad - 6.0,
            y(v) + 4.0,
            100.0 * v
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">round</text>"#,
        w / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        svg,
        r##"<polyline fill="none" stroke="#888888" stroke-width="2" stroke-dasharray="6 4" points="{}"/>"##,
        line(&|r| r.wer_baseline)
    );
    let _ = writeln!(
        svg,
        r##"<polyline fill="none" stroke="#1f5fbf" stroke-width="2" points="{}"/>"##,
        line(&|r| r.wer_fmp)
    );
    let _ = writeln!(
        svg,
        r##"<text x="{0}" y="20" fill="#1f5fbf">FMP</text><text x="{1}" y="20" fill="#888888">baseline</text>"##,
        w - pad - 110.0,
        w - pad - 60.0
    );
    svg.push_str("</svg>\n");
    svg
}
