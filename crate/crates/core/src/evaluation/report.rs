//! CSV tables, trace files and SVG charts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{detect_crossing, render_dk, EvalError, ForecastTrace, Result};
use crate::io_util::write_atomic;

pub const DK_TABLE_HEADER: [&str; 7] = [
    "failure_tag",
    "model",
    "data_logs_available",
    "component",
    "dk_logs",
    "dk_minutes",
    "rendered",
];

const NO_CROSSING: &str = "no forecasted failure";

/// One experiment: a model evaluated on one held-out failure.
#[derive(Debug, Clone, PartialEq)]
pub struct DkRow {
    pub failure_tag: u32,
    pub model: String,
    pub data_logs_available: usize,
    pub component: String,
    /// `None` when the forecast never crossed the threshold.
    pub dk_logs: Option<i64>,
}

impl DkRow {
    pub fn rendered(&self) -> String {
        self.dk_logs.map_or_else(|| NO_CROSSING.to_string(), render_dk)
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn malformed(path: &Path, detail: impl Into<String>) -> EvalError {
    EvalError::Malformed {
        path: path.display().to_string(),
        detail: detail.into(),
    }
}

fn save_csv(path: &Path, wtr: csv::Writer<Vec<u8>>) -> Result<()> {
    let bytes = wtr.into_inner().map_err(|e| EvalError::Io {
        path: path.display().to_string(),
        source: e.into_error(),
    })?;
    write_atomic(path, &bytes).map_err(io(path))
}

/// Rows sorted by `(failure_tag, model)`.
pub fn write_dk_table(path: &Path, rows: &[DkRow]) -> Result<()> {
    let mut sorted: Vec<&DkRow> = rows.iter().collect();
    sorted.sort_by(|a, b| (a.failure_tag, &a.model).cmp(&(b.failure_tag, &b.model)));
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(DK_TABLE_HEADER)?;
    for r in sorted {
        let (logs, minutes) = match r.dk_logs {
            Some(d) => (d.to_string(), (d * crate::ingest::LOG_MINUTES).to_string()),
            None => (String::new(), String::new()),
        };
        wtr.write_record([
            r.failure_tag.to_string(),
            r.model.clone(),
            r.data_logs_available.to_string(),
            r.component.clone(),
            logs,
            minutes,
            r.rendered(),
        ])?;
    }
    save_csv(path, wtr)
}

pub fn read_dk_table(path: &Path) -> Result<Vec<DkRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    if rdr.headers()?.iter().collect::<Vec<_>>() != DK_TABLE_HEADER {
        return Err(malformed(path, "unexpected header"));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |i: usize| rec[i].parse::<i64>().map_err(|_| malformed(path, format!("bad number '{}'", &rec[i])));
        rows.push(DkRow {
            failure_tag: num(0)? as u32,
            model: rec[1].to_string(),
            data_logs_available: num(2)? as usize,
            component: rec[3].to_string(),
            dk_logs: if rec[4].is_empty() { None } else { Some(num(4)?) },
        });
    }
    Ok(rows)
}

/// Sidecar of a trace CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceMeta {
    pub model: String,
    pub failure_tag: u32,
    pub n: usize,
    pub component: String,
    pub l: usize,
    pub f: usize,
}

fn trace_paths(dir: &Path, tag: u32) -> (PathBuf, PathBuf) {
    (dir.join(format!("trace_{tag}.csv")), dir.join(format!("trace_{tag}.json")))
}

/// Writes `trace_<tag>.csv` (`log_index,predicted,target`) and its JSON
/// sidecar into `dir`; returns the CSV path.
pub fn save_trace(dir: &Path, meta: &TraceMeta, trace: &ForecastTrace) -> Result<PathBuf> {
    let (csv_path, json_path) = trace_paths(dir, meta.failure_tag);
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["log_index", "predicted", "target"])?;
    for q in 0..trace.len() {
        wtr.write_record([
            trace.log_indices[q].to_string(),
            format!("{:?}", trace.predictions[q]),
            format!("{:?}", trace.targets[q]),
        ])?;
    }
    save_csv(&csv_path, wtr)?;
    let json = serde_json::to_vec_pretty(meta).expect("trace metadata serializes");
    write_atomic(&json_path, &json).map_err(io(&json_path))?;
    Ok(csv_path)
}

/// Reads a trace CSV and the sidecar next to it.
pub fn load_trace(csv_path: &Path) -> Result<(TraceMeta, ForecastTrace)> {
    let json_path = csv_path.with_extension("json");
    let text = fs::read(&json_path).map_err(io(&json_path))?;
    let meta: TraceMeta = serde_json::from_slice(&text).map_err(|e| malformed(&json_path, e.to_string()))?;
    let mut rdr = csv::Reader::from_path(csv_path)?;
    let (mut log_indices, mut predictions, mut targets) = (Vec::new(), Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec?;
        let bad = || malformed(csv_path, format!("bad row {:?}", rec));
        log_indices.push(rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(bad)?);
        predictions.push(rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(bad)?);
        targets.push(rec.get(2).and_then(|s| s.parse().ok()).ok_or_else(bad)?);
    }
    if meta.n == 0 || log_indices.iter().any(|&i: &usize| i >= meta.n) {
        return Err(malformed(csv_path, "log index outside the dataset"));
    }
    let trace = ForecastTrace {
        predictions,
        targets,
        log_indices,
        l: meta.l,
        f: meta.f,
        actual_failure_index: meta.n - 1,
    };
    Ok((meta, trace))
}

/// Failure × model grid of D_k in logs, one row per failure.
pub fn grid_rows(rows: &[DkRow]) -> (Vec<String>, Vec<Vec<String>>) {
    let models: BTreeSet<&str> = rows.iter().map(|r| r.model.as_str()).collect();
    let mut failures: BTreeMap<u32, (&DkRow, BTreeMap<&str, String>)> = BTreeMap::new();
    for r in rows {
        let cell = r.dk_logs.map_or_else(|| "none".to_string(), |d| d.to_string());
        failures.entry(r.failure_tag).or_insert_with(|| (r, BTreeMap::new())).1.insert(&r.model, cell);
    }
    let mut header = vec!["failure_tag".to_string(), "component".to_string(), "data_logs_available".to_string()];
    header.extend(models.iter().map(|m| m.to_string()));
    let body = failures
        .iter()
        .map(|(tag, (first, cells))| {
            let mut row = vec![tag.to_string(), first.component.clone(), first.data_logs_available.to_string()];
            row.extend(models.iter().map(|m| cells.get(m).cloned().unwrap_or_default()));
            row
        })
        .collect();
    (header, body)
}

/// Writes the grid plus a per-model summary (`model_summary.csv`) into
/// `dir`.
pub fn write_grid(dir: &Path, rows: &[DkRow]) -> Result<()> {
    let (header, body) = grid_rows(rows);
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(&header)?;
    for r in &body {
        wtr.write_record(r)?;
    }
    save_csv(&dir.join("dk_grid.csv"), wtr)?;

    let mut by_model: BTreeMap<&str, Vec<&DkRow>> = BTreeMap::new();
    for r in rows {
        by_model.entry(&r.model).or_default().push(r);
    }
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["model", "experiments", "crossings", "preemptive", "mean_abs_dk_logs", "mean_abs_rendered"])?;
    for (model, rs) in by_model {
        let dks: Vec<i64> = rs.iter().filter_map(|r| r.dk_logs).collect();
        let (mean, rendered) = if dks.is_empty() {
            (String::new(), String::new())
        } else {
            let mean = dks.iter().map(|d| d.abs() as f64).sum::<f64>() / dks.len() as f64;
            let text = render_dk(mean.round() as i64);
            (format!("{mean:.1}"), text.trim_end_matches(" after").to_string())
        };
        wtr.write_record([
            model.to_string(),
            rs.len().to_string(),
            dks.len().to_string(),
            dks.iter().filter(|&&d| d <= 0).count().to_string(),
            mean,
            rendered,
        ])?;
    }
    save_csv(&dir.join("model_summary.csv"), wtr)
}

/// Line chart of predicted and target RUL against log index, with the
/// crossing (if any) and the actual failure marked.
pub fn render_trace_svg(meta: &TraceMeta, trace: &ForecastTrace, threshold: f64) -> String {
    const W: f64 = 720.0;
    const H: f64 = 360.0;
    const PAD: f64 = 50.0;
    let x_max = trace.actual_failure_index.max(1) as f64;
    let values = trace.predictions.iter().chain(&trace.targets).copied();
    let (mut y_lo, mut y_hi) = values.fold((0.0f64, 1.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if y_hi - y_lo < 1e-9 {
        y_hi = y_lo + 1.0;
    }
    let pad = 0.05 * (y_hi - y_lo);
    y_lo -= pad;
    y_hi += pad;
    let sx = |x: f64| PAD + x / x_max * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y_lo) / (y_hi - y_lo) * (H - 2.0 * PAD);
    let polyline = |ys: &[f64]| {
        let mut pts = String::new();
        for (x, y) in trace.log_indices.iter().zip(ys) {
            let _ = write!(pts, "{:.2},{:.2} ", sx(*x as f64), sy(*y));
        }
        pts.trim_end().to_string()
    };

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle">Failure {} ({}), {}</text>"#,
        W / 2.0,
        meta.failure_tag,
        xml_escape(&meta.component),
        xml_escape(&meta.model)
    );
    let (x0, x1, y0, y1) = (PAD, W - PAD, H - PAD, PAD);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">log index</text>"#, W / 2.0, H - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">RUL (scaled)</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (v, anchor) in [(0.0, "start"), (x_max, "end")] {
        let _ = writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="{anchor}">{}</text>"#, sx(v), y0 + 16.0, v as usize);
    }
    for v in [y_lo + pad, y_hi - pad] {
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{:.2}</text>"#, x0 - 4.0, sy(v) + 4.0, v);
    }
    let zero = sy(threshold);
    let _ = writeln!(s, r##"<line x1="{x0}" y1="{zero:.2}" x2="{x1}" y2="{zero:.2}" stroke="#999" stroke-dasharray="4 3"/>"##);
    let fail = sx(x_max);
    let _ = writeln!(s, r##"<line x1="{fail:.2}" y1="{y0}" x2="{fail:.2}" y2="{y1}" stroke="#444" stroke-dasharray="2 2"/>"##);
    if !trace.is_empty() {
        let _ = writeln!(s, r##"<polyline fill="none" stroke="#1f77b4" stroke-width="1.5" points="{}"/>"##, polyline(&trace.targets));
        let _ = writeln!(s, r##"<polyline fill="none" stroke="#d62728" stroke-width="1" points="{}"/>"##, polyline(&trace.predictions));
    }
    if let Some(c) = detect_crossing(trace, threshold) {
        let x = sx(c.log_index as f64);
        let _ = writeln!(s, r##"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{y1}" stroke="#d62728" stroke-dasharray="4 2"/>"##);
    }
    let _ = writeln!(s, r##"<text x="{}" y="38" fill="#1f77b4">target</text>"##, W - PAD - 120.0);
    let _ = writeln!(s, r##"<text x="{}" y="38" fill="#d62728">predicted</text>"##, W - PAD - 60.0);
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes `dk_table.csv`, the grid and summary, and for each trace its CSV
/// (and SVG when `svg`) into `out_dir`.
pub fn emit_report(
    rows: &[DkRow],
    traces: &[(TraceMeta, ForecastTrace)],
    out_dir: &Path,
    threshold: f64,
    svg: bool,
) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    write_dk_table(&out_dir.join("dk_table.csv"), rows)?;
    write_grid(out_dir, rows)?;
    for (meta, trace) in traces {
        let dir = out_dir.join(&meta.model);
        save_trace(&dir, meta, trace)?;
        if svg {
            let path = dir.join(format!("trace_{}.svg", meta.failure_tag));
            write_atomic(&path, render_trace_svg(meta, trace, threshold).as_bytes()).map_err(io(&path))?;
        }
    }
    Ok(())
}
