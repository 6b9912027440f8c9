//! SCADA and failure-log CSV parsing, and the split of each turbine's
//! stream into one run-to-failure dataset per recorded failure.
//!
//! SCADA CSV: `timestamp,turbine,<p1>,...,<pM>`. Failure CSV:
//! `turbine,timestamp,component,remarks`. Timestamps are ISO-8601 UTC.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Read;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::io_util::write_atomic;
use crate::tensor::Tensor;

/// SCADA logging period.
pub const LOG_MINUTES: i64 = 10;
pub const DEFAULT_M: usize = 82;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed header: expected {expected} columns, found {found}")]
    MalformedHeader { expected: usize, found: usize },
    #[error("missing column '{0}'")]
    MissingColumn(String),
    #[error("empty file")]
    EmptyFile,
    #[error("duplicate timestamp {timestamp} for turbine {turbine}")]
    NonMonotonicTimestamps { turbine: String, timestamp: String },
    #[error("row {row}: malformed timestamp '{value}'")]
    MalformedTimestamp { row: usize, value: String },
    #[error("dataset file {path}: {detail}")]
    MalformedDataset { path: String, detail: String },
}

pub type Result<T> = std::result::Result<T, IngestError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Accepts RFC 3339 (`2017-01-01T00:10:00Z`, with any offset) and naive
/// `YYYY-MM-DD[T ]HH:MM[:SS]` read as UTC.
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(Utc.from_utc_datetime(&t));
        }
    }
    None
}

pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

/// Failed component, with the failure-log vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Component {
    Transformer,
    HydraulicGroup,
    Gearbox,
    GeneratorBearing,
    Generator,
    Other(String),
}

impl Component {
    /// Case- and punctuation-insensitive; unknown text becomes `Other`.
    pub fn parse(raw: &str) -> Component {
        let key: String = raw
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        match key.as_str() {
            "transformer" => Component::Transformer,
            "hydraulicgroup" | "hydraulic" => Component::HydraulicGroup,
            "gearbox" => Component::Gearbox,
            "generatorbearing" => Component::GeneratorBearing,
            "generator" => Component::Generator,
            _ => Component::Other(raw.trim().to_string()),
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Component::Transformer => "Transformer",
            Component::HydraulicGroup => "Hydraulic group",
            Component::Gearbox => "Gearbox",
            Component::GeneratorBearing => "Generator bearing",
            Component::Generator => "Generator",
            Component::Other(s) => s,
        })
    }
}

impl Serialize for Component {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Component {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d).map(|s| Component::parse(&s))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScadaRecord {
    pub timestamp: DateTime<Utc>,
    pub turbine_tag: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScadaTable {
    /// Parameter column names, in file order.
    pub columns: Vec<String>,
    /// Sorted by `(turbine_tag, timestamp)`.
    pub records: Vec<ScadaRecord>,
    /// Rows dropped for missing, unparseable or non-finite cells.
    pub dropped: usize,
}

pub fn parse_scada(path: &Path, expected_m: usize) -> Result<ScadaTable> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    read_scada(file, expected_m)
}

pub fn read_scada<R: Read>(reader: R, expected_m: usize) -> Result<ScadaTable> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].trim().is_empty()) {
        return Err(IngestError::EmptyFile);
    }
    if header.len() != expected_m + 2 {
        return Err(IngestError::MalformedHeader {
            expected: expected_m + 2,
            found: header.len(),
        });
    }
    let columns: Vec<String> = header.iter().skip(2).map(|c| c.trim().to_string()).collect();
    let mut records = Vec::new();
    let mut dropped = 0;
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        // Data rows are numbered from 1, after the header.
        let line = i + 1;
        if row.len() != expected_m + 2 {
            dropped += 1;
            continue;
        }
        let timestamp = parse_timestamp(&row[0]).ok_or_else(|| IngestError::MalformedTimestamp {
            row: line,
            value: row[0].to_string(),
        })?;
        let values: Option<Vec<f64>> = row
            .iter()
            .skip(2)
            .map(|c| c.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect();
        match values {
            Some(values) => records.push(ScadaRecord {
                timestamp,
                turbine_tag: row[1].trim().to_string(),
                values,
            }),
            None => dropped += 1,
        }
    }
    if records.is_empty() && dropped == 0 {
        return Err(IngestError::EmptyFile);
    }
    records.sort_by(|a, b| (&a.turbine_tag, a.timestamp).cmp(&(&b.turbine_tag, b.timestamp)));
    for pair in records.windows(2) {
        if pair[0].turbine_tag == pair[1].turbine_tag && pair[0].timestamp == pair[1].timestamp {
            return Err(IngestError::NonMonotonicTimestamps {
                turbine: pair[0].turbine_tag.clone(),
                timestamp: format_timestamp(&pair[0].timestamp),
            });
        }
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} SCADA rows with missing or unparseable cells");
    }
    Ok(ScadaTable {
        columns,
        records,
        dropped,
    })
}

/// Writes records in the format `read_scada` accepts. Floats use the
/// shortest representation that round-trips exactly.
pub fn write_scada(path: &Path, columns: &[String], records: &[ScadaRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["timestamp".to_string(), "turbine".to_string()];
    header.extend(columns.iter().cloned());
    wtr.write_record(&header)?;
    let mut row = Vec::with_capacity(header.len());
    for r in records {
        row.clear();
        row.push(format_timestamp(&r.timestamp));
        row.push(r.turbine_tag.clone());
        row.extend(r.values.iter().map(|v| format!("{v:?}")));
        wtr.write_record(&row)?;
    }
    finish_csv(path, wtr)
}

fn finish_csv(path: &Path, wtr: csv::Writer<Vec<u8>>) -> Result<()> {
    let bytes = wtr.into_inner().map_err(|e| IngestError::Io {
        path: path.display().to_string(),
        source: e.into_error(),
    })?;
    write_atomic(path, &bytes).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FailureEvent {
    pub turbine_tag: String,
    pub timestamp: DateTime<Utc>,
    pub component: Component,
    pub remarks: String,
    pub failure_tag: u32,
}

pub fn parse_failures(path: &Path) -> Result<Vec<FailureEvent>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    read_failures(bytes.as_slice())
}

/// Events sorted by `(turbine, timestamp)` and tagged 1, 2, ... in that
/// order.
pub fn read_failures<R: Read>(reader: R) -> Result<Vec<FailureEvent>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().all(|h| h.trim().is_empty()) {
        return Ok(Vec::new());
    }
    let find = |names: &[&str]| {
        header
            .iter()
            .position(|h| names.contains(&h.trim().to_ascii_lowercase().as_str()))
    };
    let turbine = find(&["turbine", "turbine_tag", "turbine_id"])
        .ok_or_else(|| IngestError::MissingColumn("turbine".into()))?;
    let timestamp = find(&["timestamp"]).ok_or_else(|| IngestError::MissingColumn("timestamp".into()))?;
    let component = find(&["component"]).ok_or_else(|| IngestError::MissingColumn("component".into()))?;
    let remarks = find(&["remarks"]);

    let mut events = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        if row.iter().all(|c| c.trim().is_empty()) {
            continue;
        }
        let cell = |j: usize| row.get(j).unwrap_or("").trim();
        let ts = parse_timestamp(cell(timestamp)).ok_or_else(|| IngestError::MalformedTimestamp {
            row: i + 1,
            value: cell(timestamp).to_string(),
        })?;
        events.push(FailureEvent {
            turbine_tag: cell(turbine).to_string(),
            timestamp: ts,
            component: Component::parse(cell(component)),
            remarks: remarks.map(|j| cell(j).to_string()).unwrap_or_default(),
            failure_tag: 0,
        });
    }
    events.sort_by(|a, b| (&a.turbine_tag, a.timestamp).cmp(&(&b.turbine_tag, b.timestamp)));
    for (i, e) in events.iter_mut().enumerate() {
        e.failure_tag = i as u32 + 1;
    }
    Ok(events)
}

pub fn write_failures(path: &Path, events: &[FailureEvent]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["turbine", "timestamp", "component", "remarks"])?;
    for e in events {
        wtr.write_record([
            e.turbine_tag.clone(),
            format_timestamp(&e.timestamp),
            e.component.to_string(),
            e.remarks.clone(),
        ])?;
    }
    finish_csv(path, wtr)
}

/// One run-to-failure life: the turbine's logs after its previous failure
/// (or stream start) up to and including the failure timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct FailureDataset {
    pub failure_tag: u32,
    pub turbine_tag: String,
    pub component: Component,
    pub remarks: String,
    pub event_timestamp: DateTime<Utc>,
    pub columns: Vec<String>,
    /// N × M.
    pub matrix: Tensor,
    pub timestamps: Vec<DateTime<Utc>>,
    pub valid: bool,
}

impl FailureDataset {
    pub fn n(&self) -> usize {
        self.timestamps.len()
    }

    pub fn m(&self) -> usize {
        self.matrix.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.m();
        &self.matrix.data()[i * m..(i + 1) * m]
    }

    /// Writes `dataset.csv` and `dataset.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let records: Vec<ScadaRecord> = (0..self.n())
            .map(|i| ScadaRecord {
                timestamp: self.timestamps[i],
                turbine_tag: self.turbine_tag.clone(),
                values: self.row(i).to_vec(),
            })
            .collect();
        write_scada(&dir.join("dataset.csv"), &self.columns, &records)?;
        let meta = DatasetMeta {
            failure_tag: self.failure_tag,
            turbine_tag: self.turbine_tag.clone(),
            component: self.component.clone(),
            remarks: self.remarks.clone(),
            event_timestamp: format_timestamp(&self.event_timestamp),
            n: self.n(),
            m: self.m(),
            valid: self.valid,
        };
        let json = serde_json::to_vec_pretty(&meta).expect("metadata serializes");
        let path = dir.join("dataset.json");
        write_atomic(&path, &json).map_err(io_err(&path))
    }

    pub fn load(dir: &Path) -> Result<FailureDataset> {
        let meta_path = dir.join("dataset.json");
        let bad = |detail: String| IngestError::MalformedDataset {
            path: meta_path.display().to_string(),
            detail,
        };
        let text = fs::read(&meta_path).map_err(io_err(&meta_path))?;
        let meta: DatasetMeta = serde_json::from_slice(&text).map_err(|e| bad(e.to_string()))?;
        let table = parse_scada(&dir.join("dataset.csv"), meta.m)?;
        if table.records.len() != meta.n || table.dropped != 0 {
            return Err(bad(format!(
                "expected {} rows, read {} ({} dropped)",
                meta.n,
                table.records.len(),
                table.dropped
            )));
        }
        let event_timestamp = parse_timestamp(&meta.event_timestamp).ok_or_else(|| bad("bad event_timestamp".into()))?;
        let data: Vec<f64> = table.records.iter().flat_map(|r| r.values.iter().copied()).collect();
        let matrix = Tensor::new(&[meta.n, meta.m], data).map_err(|e| bad(e.to_string()))?;
        Ok(FailureDataset {
            failure_tag: meta.failure_tag,
            turbine_tag: meta.turbine_tag,
            component: meta.component,
            remarks: meta.remarks,
            event_timestamp,
            columns: table.columns,
            matrix,
            timestamps: table.records.iter().map(|r| r.timestamp).collect(),
            valid: meta.valid,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetMeta {
    failure_tag: u32,
    turbine_tag: String,
    component: Component,
    remarks: String,
    event_timestamp: String,
    n: usize,
    m: usize,
    valid: bool,
}

/// Non-fatal problems found while splitting.
#[derive(Debug, Clone, PartialEq)]
pub enum IngestIssue {
    /// The event's turbine has no SCADA records at all.
    NoRecordsForTurbine,
    /// The turbine has records, but none between the previous failure and
    /// this one.
    NoRecordsInLife,
    /// The last log precedes the event by more than one grid step.
    LastLogGap { minutes: i64 },
    /// Fewer than `min_logs` rows; the dataset is kept but marked invalid.
    TooFewLogs { n: usize, min_logs: usize },
}

impl fmt::Display for IngestIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IngestIssue::NoRecordsForTurbine => write!(f, "no SCADA records for turbine"),
            IngestIssue::NoRecordsInLife => write!(f, "no SCADA records since previous failure"),
            IngestIssue::LastLogGap { minutes } => write!(f, "last log {minutes} min before event"),
            IngestIssue::TooFewLogs { n, min_logs } => write!(f, "{n} logs < min_logs {min_logs}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestReport {
    pub failure_tag: u32,
    pub turbine_tag: String,
    pub issue: IngestIssue,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitOutput {
    /// In failure-tag order.
    pub datasets: Vec<FailureDataset>,
    pub reports: Vec<IngestReport>,
}

/// `records` must be sorted by `(turbine, timestamp)` as `read_scada`
/// returns them.
pub fn build_failure_datasets(
    columns: &[String],
    records: &[ScadaRecord],
    events: &[FailureEvent],
    min_logs: usize,
) -> SplitOutput {
    let mut by_turbine: BTreeMap<&str, Vec<&ScadaRecord>> = BTreeMap::new();
    for r in records {
        by_turbine.entry(r.turbine_tag.as_str()).or_default().push(r);
    }
    let mut ordered: Vec<&FailureEvent> = events.iter().collect();
    ordered.sort_by(|a, b| (&a.turbine_tag, a.timestamp, a.failure_tag).cmp(&(&b.turbine_tag, b.timestamp, b.failure_tag)));

    let mut datasets = Vec::new();
    let mut reports = Vec::new();
    let mut report = |e: &FailureEvent, issue| {
        reports.push(IngestReport {
            failure_tag: e.failure_tag,
            turbine_tag: e.turbine_tag.clone(),
            issue,
        })
    };
    let mut previous: Option<(&str, DateTime<Utc>)> = None;
    for e in ordered {
        let start_after = match previous {
            Some((t, ts)) if t == e.turbine_tag => Some(ts),
            _ => None,
        };
        previous = Some((e.turbine_tag.as_str(), e.timestamp));
        let Some(rows) = by_turbine.get(e.turbine_tag.as_str()) else {
            log::warn!("failure {} on turbine {}: no SCADA records", e.failure_tag, e.turbine_tag);
            report(e, IngestIssue::NoRecordsForTurbine);
            continue;
        };
        let lo = start_after.map_or(0, |ts| rows.partition_point(|r| r.timestamp <= ts));
        let hi = rows.partition_point(|r| r.timestamp <= e.timestamp);
        if lo >= hi {
            report(e, IngestIssue::NoRecordsInLife);
            continue;
        }
        let life = &rows[lo..hi];
        let gap = (e.timestamp - life[life.len() - 1].timestamp).num_minutes();
        if gap > LOG_MINUTES {
            report(e, IngestIssue::LastLogGap { minutes: gap });
        }
        let gaps = life
            .windows(2)
            .filter(|w| (w[1].timestamp - w[0].timestamp).num_minutes() > LOG_MINUTES)
            .count();
        if gaps > 0 {
            log::info!("failure {}: {gaps} timestamp gaps in {} logs", e.failure_tag, life.len());
        }
        let n = life.len();
        if n < min_logs {
            report(e, IngestIssue::TooFewLogs { n, min_logs });
        }
        let data: Vec<f64> = life.iter().flat_map(|r| r.values.iter().copied()).collect();
        datasets.push(FailureDataset {
            failure_tag: e.failure_tag,
            turbine_tag: e.turbine_tag.clone(),
            component: e.component.clone(),
            remarks: e.remarks.clone(),
            event_timestamp: e.timestamp,
            columns: columns.to_vec(),
            matrix: Tensor::new(&[n, columns.len()], data).expect("rows have M values"),
            timestamps: life.iter().map(|r| r.timestamp).collect(),
            valid: n >= min_logs,
        });
    }
    datasets.sort_by_key(|d| d.failure_tag);
    SplitOutput { datasets, reports }
}

/// Validity table: one row per dataset plus one per event that produced
/// no dataset.
pub fn write_validity_csv(path: &Path, out: &SplitOutput, events: &[FailureEvent]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["failure_tag", "turbine", "timestamp", "component", "n", "valid", "remarks"])?;
    for e in events {
        let d = out.datasets.iter().find(|d| d.failure_tag == e.failure_tag);
        let (n, valid) = match d {
            Some(d) => (d.n().to_string(), d.valid.to_string()),
            None => ("0".to_string(), "false".to_string()),
        };
        let note = out
            .reports
            .iter()
            .filter(|r| r.failure_tag == e.failure_tag)
            .map(|r| r.issue.to_string())
            .collect::<Vec<_>>()
            .join("; ");
        wtr.write_record([
            e.failure_tag.to_string(),
            e.turbine_tag.clone(),
            format_timestamp(&e.timestamp),
            e.component.to_string(),
            n,
            valid,
            if note.is_empty() { e.remarks.clone() } else { note },
        ])?;
    }
    finish_csv(path, wtr)
}
