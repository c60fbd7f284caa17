//! Versioned CSV files, the run manifest and SVG line charts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, SweepAxis};
use super::schema_line;
use super::sweep::{SweepOutcome, METHODS};
use crate::error::{Error, Result};
use crate::synthgen::format_float;

/// Write through a sibling temp file and rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Schema comment line followed by `header` and `rows`.
pub fn versioned_csv(schema: &str, header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::invalid(format!("csv write: {e}"));
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    let body = w.into_inner().map_err(|e| Error::invalid(format!("csv write: {e}")))?;
    Ok(schema_line(schema) + &String::from_utf8(body).expect("csv output is utf-8"))
}

pub fn sweep_csv(out: &SweepOutcome) -> Result<String> {
    let rows: Vec<Vec<String>> = out
        .rows
        .iter()
        .map(|r| {
            vec![
                r.axis.name().to_string(),
                r.axis_value.to_string(),
                r.method.name().to_string(),
                format_float(r.mean),
                format_float(r.std),
                r.runs.to_string(),
            ]
        })
        .collect();
    versioned_csv(
        "sweep",
        &["axis", "axisValue", "method", "meanTestMSE", "stdTestMSE", "runs"],
        &rows,
    )
}

pub fn reduction_csv(out: &SweepOutcome) -> Result<String> {
    let rows: Vec<Vec<String>> = out
        .reductions
        .iter()
        .map(|r| vec![r.axis.name().to_string(), r.axis_value.to_string(), format_float(r.reduction)])
        .collect();
    versioned_csv("reduction", &["axis", "axisValue", "reduction"], &rows)
}

pub fn runs_csv(out: &SweepOutcome, axis: SweepAxis) -> Result<String> {
    let rows: Vec<Vec<String>> = out
        .records
        .iter()
        .map(|r| {
            vec![
                axis.name().to_string(),
                r.axis_value.to_string(),
                r.method.name().to_string(),
                r.run.to_string(),
                r.status.name().to_string(),
                format_float(r.test_mse),
                format_float(r.train_mse),
                format_float(r.lr),
                format_float(r.test_sq_norm),
            ]
        })
        .collect();
    versioned_csv(
        "runs",
        &["axis", "axisValue", "method", "run", "status", "testMSE", "trainMSE", "lr", "testSqNorm"],
        &rows,
    )
}

/// `variant,mU,mL,reduction,C,L` with the real-valued sample sizes.
pub fn bounds_csv(results: &[crate::bounds::BoundResult]) -> Result<String> {
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|b| {
            vec![
                b.variant.name().to_string(),
                format_float(b.m_u),
                format_float(b.m_l),
                format_float(b.reduction),
                format_float(b.c),
                format_float(b.l),
            ]
        })
        .collect();
    versioned_csv("bounds", &["variant", "mU", "mL", "reduction", "C", "L"], &rows)
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    hex::encode(Sha256::digest(cfg.to_text().as_bytes()))
}

/// Human name of the figure a sweep reproduces.
pub fn figure_name(axis: SweepAxis, normalized: bool) -> &'static str {
    match (axis, normalized) {
        (SweepAxis::LabeledSize, _) => "test MSE vs labeled size",
        (SweepAxis::R, _) => "test MSE and reduction vs r",
        (SweepAxis::D, true) => "normalized test MSE and reduction vs d",
        (SweepAxis::D, false) => "test MSE and reduction vs d",
        (SweepAxis::None, _) => "single configuration",
    }
}

/// `key=value` manifest; `files` pairs each emitted file with the figure it mirrors.
pub fn manifest(cfg: &ExperimentConfig, command: &str, files: &[(&str, &str)], extra: &[(&str, String)]) -> String {
    let mut s = schema_line("manifest");
    let _ = writeln!(s, "version={}", super::VERSION);
    let _ = writeln!(s, "command={command}");
    let _ = writeln!(s, "config_sha256={}", config_hash(cfg));
    let _ = writeln!(s, "master_seed={}", cfg.seed);
    let _ = writeln!(s, "profile={}", cfg.profile.name());
    for (k, v) in extra {
        let _ = writeln!(s, "{k}={v}");
    }
    for (file, figure) in files {
        let _ = writeln!(s, "file={file};figure={figure}");
    }
    s
}

/// Emit `sweep.csv`, `reduction.csv`, `runs.csv`, `sweep.svg`, `config.txt`
/// and `manifest.txt` under `dir`.
pub fn write_sweep_outputs(cfg: &ExperimentConfig, out: &SweepOutcome, dir: &Path) -> Result<Vec<PathBuf>> {
    let figure = figure_name(cfg.axis, cfg.normalize);
    let y_label = if cfg.normalize { "test MSE / mean |x|^2" } else { "test MSE" };
    let series: Vec<Series> = METHODS
        .iter()
        .map(|&m| Series {
            name: m.name().to_string(),
            points: out
                .rows
                .iter()
                .filter(|r| r.method == m && r.mean.is_finite())
                .map(|r| (r.axis_value as f64, r.mean))
                .collect(),
        })
        .collect();
    let chart = line_chart(figure, cfg.axis.name(), y_label, &series, cfg.axis == SweepAxis::LabeledSize);
    let failed: usize = out.rows.iter().map(|r| r.failed).sum();
    let files = [
        ("sweep.csv", sweep_csv(out)?, figure),
        ("reduction.csv", reduction_csv(out)?, figure),
        ("runs.csv", runs_csv(out, cfg.axis)?, figure),
        ("sweep.svg", chart, figure),
        ("config.txt", cfg.to_text(), "-"),
    ];
    let listing: Vec<(&str, &str)> = files.iter().map(|(n, _, f)| (*n, *f)).collect();
    let man = manifest(
        cfg,
        "sweep",
        &listing,
        &[
            ("axis", cfg.axis.name().to_string()),
            ("normalized", cfg.normalize.to_string()),
            ("failed_runs", failed.to_string()),
        ],
    );
    let mut written = Vec::new();
    for (name, body, _) in files.iter() {
        let p = dir.join(name);
        write_atomic(&p, body.as_bytes())?;
        written.push(p);
    }
    let p = dir.join("manifest.txt");
    write_atomic(&p, man.as_bytes())?;
    written.push(p);
    Ok(written)
}

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 4] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd"];

/// Minimal SVG line chart with axis ticks and a legend.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], log_x: bool) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (70.0, 20.0, 40.0, 50.0);
    let tx = |x: f64| if log_x { x.max(f64::MIN_POSITIVE).log10() } else { x };
    let all: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied()).collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64, f64::NEG_INFINITY);
    for &(x, y) in &all {
        x0 = x0.min(tx(x));
        x1 = x1.max(tx(x));
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if all.is_empty() {
        (x0, x1, y1) = (0.0, 1.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    y1 += 0.05 * (y1 - y0);
    let px = |x: f64| left + (tx(x) - x0) / (x1 - x0) * (w - left - right);
    let py = |y: f64| h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/><line x1="{left}" y1="{top}" x2="{left}" y2="{0}" stroke="black"/>"#,
        h - bottom,
        w - right
    );
    for k in 0..=4 {
        let yv = y0 + (y1 - y0) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
            left - 6.0,
            py(yv) + 4.0,
            tick(yv)
        );
    }
    let mut xs: Vec<f64> = all.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    for x in xs {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            px(x),
            h - bottom + 16.0,
            tick(x)
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, w / 2.0, h - 12.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        h / 2.0,
        escape(y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" "));
        for &(x, y) in &ser.points {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, px(x), py(y));
        }
        let ly = top + 6.0 + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{0}" y1="{ly}" x2="{1}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{2}" y="{3}">{4}</text>"#,
            w - right - 130.0,
            w - right - 110.0,
            w - right - 104.0,
            ly + 4.0,
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Scatter plot of 2-D points colored by group.
pub fn scatter_chart(title: &str, groups: &[Series]) -> String {
    let (w, h, pad) = (520.0, 520.0, 40.0);
    let all: Vec<(f64, f64)> = groups.iter().flat_map(|g| g.points.iter().copied()).collect();
    let span = |f: fn(&(f64, f64)) -> f64| {
        let lo = all.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = all.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        if all.is_empty() || hi <= lo {
            (lo.min(0.0), lo.min(0.0) + 1.0)
        } else {
            (lo, hi)
        }
    };
    let (x0, x1) = span(|p| p.0);
    let (y0, y1) = span(|p| p.1);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    for (i, g) in groups.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        for &(x, y) in &g.points {
            let cx = pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
            let cy = h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
            let _ = writeln!(s, r#"<circle cx="{cx:.1}" cy="{cy:.1}" r="3" fill="{color}" fill-opacity="0.7"/>"#);
        }
        let _ = writeln!(
            s,
            r#"<circle cx="{}" cy="{}" r="4" fill="{color}"/><text x="{}" y="{}">{}</text>"#,
            pad,
            pad + 16.0 * i as f64,
            pad + 10.0,
            pad + 16.0 * i as f64 + 4.0,
            escape(&g.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        let t = format!("{v:.3}");
        t.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
