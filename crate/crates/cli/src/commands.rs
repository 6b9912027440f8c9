use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use rulcast::evaluation::{
    correlation_matrix, emit_report, forecast, load_trace, save_trace, trace_dk, write_dk_table, CorrelationMethod,
    DkRow, ForecastTrace, TraceMeta,
};
use rulcast::ingest::{build_failure_datasets, parse_failures, parse_scada, write_validity_csv, FailureDataset};
use rulcast::io_util::write_atomic;
use rulcast::models::{read_checkpoint, write_checkpoint, Architecture, ModelSpec};
use rulcast::preprocess::{prepare, PreprocessError, WindowParams, WindowedDataset};
use rulcast::synth::{generate, SynthConfig};
use rulcast::training::{train_leave_one_out, write_train_log, TrainOutcome};

use crate::config::RunConfig;
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

const DATASET_PREFIX: &str = "failure_";

pub fn dataset_dir(root: &Path, tag: u32) -> PathBuf {
    root.join(format!("{DATASET_PREFIX}{tag}"))
}

pub fn synth(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut cfg = match config {
        None => SynthConfig::default(),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::usage(format!("config {}: {e}", p.display())))?
        }
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let fx = generate(&cfg)?;
    fs::create_dir_all(out)?;
    fx.write(out)?;
    println!(
        "wrote {} failures, {} SCADA rows, M={} to {}",
        fx.events.len(),
        fx.records.len(),
        fx.columns.len(),
        out.display()
    );
    Ok(())
}

pub fn ingest(scada: &Path, failures: &Path, out: &Path, cfg: &RunConfig) -> Result<()> {
    let table = parse_scada(scada, cfg.m)?;
    let events = parse_failures(failures)?;
    if table.dropped > 0 {
        log::warn!("dropped {} SCADA rows with missing or unparseable cells", table.dropped);
    }
    let split = build_failure_datasets(&table.columns, &table.records, &events, cfg.min_logs());
    for r in &split.reports {
        log::warn!("failure {}: {}", r.failure_tag, r.issue);
    }
    fs::create_dir_all(out)?;
    for d in &split.datasets {
        d.save(&dataset_dir(out, d.failure_tag))?;
    }
    write_validity_csv(&out.join("validity.csv"), &split, &events)?;
    let valid = split.datasets.iter().filter(|d| d.valid).count();
    println!(
        "{} events, {} datasets ({} valid, min_logs {}) in {}",
        events.len(),
        split.datasets.len(),
        valid,
        cfg.min_logs(),
        out.display()
    );
    Ok(())
}

/// Every `failure_<tag>` directory under `root`, sorted by tag.
fn dataset_tags(root: &Path) -> Result<Vec<u32>> {
    let entries = fs::read_dir(root).map_err(|e| CliError::data(format!("{}: {e}", root.display())))?;
    let mut tags = Vec::new();
    for entry in entries {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(tag) = name.strip_prefix(DATASET_PREFIX).and_then(|t| t.parse().ok()) {
            tags.push(tag);
        }
    }
    tags.sort_unstable();
    Ok(tags)
}

/// Windows every valid dataset under `root`. Datasets too short for the
/// window parameters are skipped with a warning.
pub fn load_windowed(root: &Path, params: WindowParams) -> Result<Vec<WindowedDataset>> {
    let mut out = Vec::new();
    for tag in dataset_tags(root)? {
        let d = FailureDataset::load(&dataset_dir(root, tag))?;
        if !d.valid {
            log::info!("failure {tag}: marked invalid at ingest, skipped");
            continue;
        }
        match prepare(&d, params) {
            Ok(w) => out.push(w),
            Err(e @ (PreprocessError::NotEnoughLogs { .. } | PreprocessError::HorizonTooLong { .. })) => {
                log::warn!("failure {tag}: {e}, skipped")
            }
            Err(e) => return Err(e.into()),
        }
    }
    if out.is_empty() {
        return Err(CliError::data(format!("no usable datasets under {}", root.display())));
    }
    Ok(out)
}

pub fn parse_model(name: &str) -> Result<Architecture> {
    name.parse().map_err(CliError::usage)
}

fn run_dir(out: &Path, arch: Architecture, tag: u32) -> PathBuf {
    out.join(arch.name()).join(format!("target_{tag}"))
}

fn save_outcome(out: &Path, arch: Architecture, cfg: &RunConfig, o: &TrainOutcome) -> Result<()> {
    let dir = run_dir(out, arch, o.target_failure_tag);
    fs::create_dir_all(&dir)?;
    write_train_log(&dir.join("train_log.csv"), &o.epochs)?;
    let mut meta = BTreeMap::new();
    meta.insert("f".to_string(), cfg.f.to_string());
    meta.insert("stride".to_string(), cfg.stride.to_string());
    meta.insert("target".to_string(), o.target_failure_tag.to_string());
    meta.insert("threshold".to_string(), format!("{:?}", cfg.threshold));
    let mut final_meta = meta.clone();
    final_meta.insert("epoch".to_string(), o.epochs.len().to_string());
    write_checkpoint(&o.final_model, &final_meta, &dir.join("final.fnet"))?;
    let best = dir.join("checkpoint.fnet");
    match (&o.best_model, o.best_epoch) {
        (Some(model), Some(epoch)) => {
            meta.insert("epoch".to_string(), epoch.to_string());
            write_checkpoint(model, &meta, &best)?;
        }
        _ => {
            // A stale checkpoint from an earlier run would be misleading.
            if best.exists() {
                fs::remove_file(&best)?;
            }
        }
    }
    let summary = serde_json::json!({
        "model": arch.name(),
        "target_failure_tag": o.target_failure_tag,
        "best_epoch": o.best_epoch,
        "best_dk_logs": o.best_record().and_then(|r| r.test_dk_logs),
        "trained_on": o.trained_on,
        "holdout_policy": o.policy,
        "config": cfg,
    });
    let text = serde_json::to_vec_pretty(&summary).expect("plain JSON value");
    write_atomic(&dir.join("outcome.json"), &text)?;
    Ok(())
}

pub fn train(data: &Path, targets: Option<Vec<u32>>, model: &str, out: &Path, cfg: &RunConfig) -> Result<()> {
    let arch = parse_model(model)?;
    let datasets = load_windowed(data, cfg.window())?;
    let spec = ModelSpec::new(arch, cfg.l, datasets[0].meta.m, cfg.seed);
    let train_cfg = cfg.train();
    let all = targets.is_none();
    let targets = targets.unwrap_or_else(|| datasets.iter().map(|d| d.failure_tag()).collect());
    let run = |tag: &u32| -> Result<TrainOutcome> {
        let o = train_leave_one_out(&datasets, *tag, &spec, &train_cfg)?;
        save_outcome(out, arch, cfg, &o)?;
        Ok(o)
    };
    // One worker per target; every run is deterministic on its own.
    let outcomes: Vec<Result<TrainOutcome>> = if all {
        targets.par_iter().map(run).collect()
    } else {
        targets.iter().map(run).collect()
    };
    for o in outcomes {
        let o = o?;
        let best = match o.best_record() {
            Some(r) => format!("best epoch {} (D_k {} logs)", r.epoch, r.test_dk_logs.unwrap_or_default()),
            None => "no qualified epoch, no checkpoint saved".to_string(),
        };
        println!(
            "{} target {}: {best}; {}",
            arch.name(),
            o.target_failure_tag,
            run_dir(out, arch, o.target_failure_tag).display()
        );
    }
    Ok(())
}

pub fn forecast_cmd(checkpoint: &Path, data: &Path, target: u32, out: Option<&Path>, cfg: &RunConfig) -> Result<()> {
    let (model, meta) = read_checkpoint(checkpoint)?;
    let read = |key: &str, fallback: usize| -> Result<usize> {
        meta.get(key)
            .map(|v| v.parse().map_err(|_| CliError::data(format!("checkpoint meta {key}={v}"))))
            .unwrap_or(Ok(fallback))
    };
    let params = WindowParams {
        l: model.spec.input_shape[0],
        f: read("f", cfg.f)?,
        stride: read("stride", cfg.stride)?,
    };
    let d = FailureDataset::load(&dataset_dir(data, target))?;
    let windowed = prepare(&d, params)?;
    let trace = forecast(&model, &windowed)?;
    let trace_meta = TraceMeta {
        model: model.spec.architecture.name().to_string(),
        failure_tag: target,
        n: d.n(),
        component: d.component.to_string(),
        l: params.l,
        f: params.f,
    };
    let dir = match out {
        Some(p) => p.to_path_buf(),
        None => checkpoint.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let path = save_trace(&dir, &trace_meta, &trace)?;
    let dk = trace_dk(&trace, cfg.threshold);
    let rendered = dk.map_or("no forecasted failure".to_string(), |r| format!("D_k {} logs", r.dk_logs));
    println!("{} predictions, {rendered}; {}", trace.len(), path.display());
    Ok(())
}

fn find_traces(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?
        .collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let path = e.path();
        let name = e.file_name().to_string_lossy().into_owned();
        if path.is_dir() {
            find_traces(&path, found)?;
        } else if name.starts_with("trace_") && name.ends_with(".csv") {
            found.push(path);
        }
    }
    Ok(())
}

/// Every trace under `dir`; a later trace for the same (model, tag) wins.
pub fn collect_traces(dir: &Path) -> Result<Vec<(TraceMeta, ForecastTrace)>> {
    let mut paths = Vec::new();
    find_traces(dir, &mut paths)?;
    let mut by_key = BTreeMap::new();
    for p in paths {
        let (meta, trace) = load_trace(&p)?;
        by_key.insert((meta.failure_tag, meta.model.clone()), (meta, trace));
    }
    if by_key.is_empty() {
        return Err(CliError::data(format!("no trace_<tag>.csv files under {}", dir.display())));
    }
    Ok(by_key.into_values().collect())
}

fn dk_rows(traces: &[(TraceMeta, ForecastTrace)], threshold: f64) -> Vec<DkRow> {
    traces
        .iter()
        .map(|(meta, trace)| DkRow {
            failure_tag: meta.failure_tag,
            model: meta.model.clone(),
            data_logs_available: meta.n,
            component: meta.component.clone(),
            dk_logs: trace_dk(trace, threshold).map(|r| r.dk_logs),
        })
        .collect()
}

pub fn evaluate(traces_dir: &Path, out: Option<&Path>, cfg: &RunConfig) -> Result<()> {
    let traces = collect_traces(traces_dir)?;
    let rows = dk_rows(&traces, cfg.threshold);
    let path = out.map_or_else(|| traces_dir.join("dk_table.csv"), Path::to_path_buf);
    write_dk_table(&path, &rows)?;
    for r in &rows {
        println!("failure {} {}: {}", r.failure_tag, r.model, r.rendered());
    }
    println!("{}", path.display());
    Ok(())
}

pub fn report(results: &Path, out: &Path, svg: bool, data: Option<&Path>, cfg: &RunConfig) -> Result<()> {
    let traces = collect_traces(results)?;
    let rows = dk_rows(&traces, cfg.threshold);
    emit_report(&rows, &traces, out, cfg.threshold, svg)?;
    if let Some(root) = data {
        for tag in dataset_tags(root)? {
            let d = FailureDataset::load(&dataset_dir(root, tag))?;
            write_correlation(&out.join(format!("correlation_{tag}.csv")), &d)?;
        }
    }
    println!("{} rows, {} traces; {}", rows.len(), traces.len(), out.display());
    Ok(())
}

fn write_correlation(path: &Path, d: &FailureDataset) -> Result<()> {
    let c = correlation_matrix(&d.matrix, CorrelationMethod::Pearson)?;
    let mut text = String::from("parameter");
    for name in &d.columns {
        text.push(',');
        text.push_str(name);
    }
    text.push('\n');
    for (name, row) in d.columns.iter().zip(&c) {
        text.push_str(name);
        for v in row {
            text.push_str(&format!(",{v:?}"));
        }
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())?;
    Ok(())
}
