use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::bench::MetricsReport;
use crate::error::{Error, Result};

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Writes `report.csv` (one row per cell), `report.json` (everything) and
/// `report.svg` (mean AUCROC per method) into `dir`.
pub fn write_report(report: &MetricsReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join("report.csv");
    let mut w =
        csv::Writer::from_path(&csv_path).map_err(|e| Error::Internal(format!("{}: {e}", csv_path.display())))?;
    let csv_err = |e: csv::Error| Error::Internal(e.to_string());
    w.write_record(["dataset", "method", "seed", "aucroc", "f1", "error", "config_hash"])
        .map_err(csv_err)?;
    for c in &report.cells {
        w.write_record([
            c.dataset.as_str(),
            c.method.as_str(),
            &c.seed.to_string(),
            &opt(c.aucroc),
            &opt(c.f1),
            c.error.as_deref().unwrap_or(""),
            &report.config_hash,
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    let json_path = dir.join("report.json");
    fs::write(&json_path, serde_json::to_vec_pretty(report)?).map_err(|e| Error::io(&json_path, e))?;
    let svg_path = dir.join("report.svg");
    fs::write(&svg_path, render_svg(report)).map_err(|e| Error::io(&svg_path, e))
}

/// Bar chart of mean AUCROC and F1 per method.
pub fn render_svg(report: &MetricsReport) -> String {
    let (bar, gap, height, top) = (28.0, 24.0, 220.0, 30.0);
    let n = report.aggregates.len().max(1) as f64;
    let width = 60.0 + n * (2.0 * bar + gap);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{}" font-family="sans-serif" font-size="11">"#,
        height + top + 40.0
    );
    let _ = writeln!(
        s,
        "<desc>config_hash {} scenario {}</desc>",
        report.config_hash,
        report.scenario.label()
    );
    let _ = writeln!(
        s,
        r#"<text x="10" y="18">{} (AUCROC dark, F1 light)</text>"#,
        report.scenario.label()
    );
    let base = top + height;
    let _ = writeln!(
        s,
        r##"<line x1="40" y1="{base}" x2="{width}" y2="{base}" stroke="#000"/>"##
    );
    for (i, a) in report.aggregates.iter().enumerate() {
        let x = 50.0 + i as f64 * (2.0 * bar + gap);
        for (k, (v, fill)) in [(a.mean_aucroc, "#335"), (a.mean_f1, "#99b")].into_iter().enumerate() {
            let v = v.unwrap_or(0.0).clamp(0.0, 1.0);
            let h = v * height;
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="{bar}" height="{h:.1}" fill="{fill}"/>"#,
                x + k as f64 * bar,
                base - h
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" font-size="9">{v:.3}</text>"#,
                x + k as f64 * bar,
                base - h - 3.0
            );
        }
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}">{}</text>"#, base + 16.0, a.method);
    }
    s.push_str("</svg>\n");
    s
}
