//! CSV tables, SVG plots and the run manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dualfast_core::disentangle::ErrorCurve;
use serde::Serialize;

use crate::error::{HarnessError, Result};
use crate::run::{ConvergenceResult, MetricReport};

pub const COMPARE_HEADER: &str = "method,n,mse_to_reference,mean_error,cov_frobenius_error,nfe";
pub const ABLATION_HEADER: &str = "axis,value,method,n,mse_to_reference,mean_error,cov_frobenius_error,nfe";
pub const CONVERGENCE_HEADER: &str = "method,n,error";
pub const ORDER_HEADER: &str = "method,slope,intercept,r_squared";
pub const DISENTANGLE_HEADER: &str = "period_index,s,t,approx_mse,disc_mse";

pub fn compare_csv(reports: &[MetricReport]) -> String {
    let mut s = format!("{COMPARE_HEADER}\n");
    for rep in reports {
        for r in &rep.records {
            let _ = writeln!(s, "{},{},{},{},{},{}", rep.method, r.n, r.mse_to_reference, r.mean_error, r.cov_frobenius_error, r.nfe);
        }
    }
    s
}

pub fn ablation_csv(axis: &str, results: &[(String, MetricReport)]) -> String {
    let mut s = format!("{ABLATION_HEADER}\n");
    for (value, rep) in results {
        for r in &rep.records {
            let _ = writeln!(
                s,
                "{axis},{value},{},{},{},{},{},{}",
                rep.method, r.n, r.mse_to_reference, r.mean_error, r.cov_frobenius_error, r.nfe
            );
        }
    }
    s
}

pub fn convergence_csv(results: &[ConvergenceResult]) -> (String, String) {
    let mut errors = format!("{CONVERGENCE_HEADER}\n");
    let mut fits = format!("{ORDER_HEADER}\n");
    for res in results {
        for (n, e) in &res.errors {
            let _ = writeln!(errors, "{},{n},{e}", res.method);
        }
        let _ = writeln!(fits, "{},{},{},{}", res.method, res.fit.slope, res.fit.intercept, res.fit.r_squared);
    }
    (errors, fits)
}

pub fn disentangle_csv(curve: &ErrorCurve) -> String {
    let mut s = format!("{DISENTANGLE_HEADER}\n");
    for r in &curve.records {
        let _ = writeln!(s, "{},{},{},{},{}", r.index, r.s, r.t, r.approx_mse, r.disc_mse);
    }
    s
}

pub fn samples_csv(samples: &[Vec<f64>]) -> String {
    let dim = samples.first().map_or(0, Vec::len);
    let mut s = String::from("index");
    for d in 0..dim {
        let _ = write!(s, ",x{d}");
    }
    s.push('\n');
    for (i, x) in samples.iter().enumerate() {
        let _ = write!(s, "{i}");
        for v in x {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| HarnessError::io(path, e))
}

/// One named curve.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

pub fn report_series(reports: &[MetricReport]) -> Vec<Series> {
    reports
        .iter()
        .map(|r| Series { name: r.method.clone(), points: r.records.iter().map(|m| (m.n as f64, m.mse_to_reference)).collect() })
        .collect()
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];
const GRID: &str = "#dddddd";
const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn series_csv(series: &[Series]) -> String {
    let mut s = String::from("series,x,y\n");
    for c in series {
        for (x, y) in &c.points {
            let _ = writeln!(s, "{},{x},{y}", c.name);
        }
    }
    s
}

/// Self-contained SVG with a log-scaled y axis and the data embedded as CSV.
/// Non-positive y values stay in the data table but are not drawn.
pub fn render_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<String> {
    let drawn: Vec<(f64, f64)> = series.iter().flat_map(|c| c.points.iter().copied()).filter(|p| p.1 > 0.0 && p.1.is_finite()).collect();
    if series.is_empty() || drawn.is_empty() {
        return Err(HarnessError::Config("nothing to plot".into()));
    }
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &drawn {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y.log10());
        y1 = y1.max(y.log10());
    }
    let (y0, y1) = (y0.floor(), y1.ceil().max(y0.floor() + 1.0));
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let py = |ly: f64| TOP + (y1 - ly) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, "<title>{}</title>", escape(title));
    let _ = writeln!(s, "<metadata id=\"data\"><![CDATA[\n{}]]></metadata>", series_csv(series));
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, LEFT + pw / 2.0, escape(title));
    let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    let mut d = y0 as i32;
    while d as f64 <= y1 {
        let y = py(d as f64);
        let _ = writeln!(s, r#"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{GRID}"/>"#, LEFT + pw);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">1e{d}</text>"#, LEFT - 6.0, y + 4.0);
        d += 1;
    }
    let mut xs: Vec<f64> = drawn.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    for x in xs {
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{x}</text>"#, px(x), TOP + ph + 18.0);
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, H - 10.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(y_label)
    );
    for (k, c) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = c
            .points
            .iter()
            .filter(|p| p.1 > 0.0 && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y.log10())))
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" "));
        for p in &pts {
            let (cx, cy) = p.split_once(',').unwrap();
            let _ = writeln!(s, r#"<circle cx="{cx}" cy="{cy}" r="3" fill="{color}"/>"#);
        }
        let ly = TOP + 10.0 + 18.0 * k as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" class="legend">{}</text>"#, lx + 26.0, ly + 4.0, escape(&c.name));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Write `<path>` as SVG and the same data as CSV next to it.
pub fn emit_plot(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<PathBuf> {
    let svg = render_svg(title, x_label, y_label, series)?;
    write_file(path, &svg)?;
    let csv = path.with_extension("csv");
    write_file(&csv, &series_csv(series))?;
    Ok(csv)
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub dualfast_core: &'static str,
    pub dualfast_harness: &'static str,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub versions: Versions,
    pub mse_normalization: &'static str,
    pub note: &'static str,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config_hash: String, seed: u64, outputs: Vec<String>) -> Self {
        Self {
            command: command.to_string(),
            config_hash,
            seed,
            versions: Versions { dualfast_core: dualfast_core::VERSION, dualfast_harness: env!("CARGO_PKG_VERSION") },
            mse_normalization: "per-dimension mean squared distance",
            note: "MSE values depend on the data mixture's scale; compare methods against each other, not against published image-model numbers.",
            outputs,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_file(&dir.join("run_manifest.json"), &(text + "\n"))
    }
}
