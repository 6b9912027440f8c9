//! Forecast traces, the end-of-life crossing, the D_k disparity and
//! correlation matrices.

mod report;

pub use report::{
    emit_report, grid_rows, load_trace, read_dk_table, render_trace_svg, save_trace, write_dk_table, write_grid,
    DkRow, TraceMeta, DK_TABLE_HEADER,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ingest::LOG_MINUTES;
use crate::models::{Model, ModelError};
use crate::preprocess::WindowedDataset;
use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("model input {model:?} does not fit windows of {l} x {m}")]
    ShapeMismatch { model: Vec<usize>, l: usize, m: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("need at least 2 logs, got {0}")]
    NotEnoughLogs(usize),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed {path}: {detail}")]
    Malformed { path: String, detail: String },
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Predictions for every pair of one failure dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastTrace {
    pub predictions: Vec<f64>,
    pub targets: Vec<f64>,
    /// Log index (0-based row) of each pair's target.
    pub log_indices: Vec<usize>,
    pub l: usize,
    pub f: usize,
    /// `N - 1`.
    pub actual_failure_index: usize,
}

impl ForecastTrace {
    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }

    pub fn rmse(&self) -> f64 {
        crate::tensor::rmse(&self.predictions, &self.targets).unwrap_or(f64::NAN)
    }
}

/// One prediction per pair, in pair order. Windows are evaluated in
/// parallel; results do not depend on the thread count.
pub fn forecast(model: &Model, windowed: &WindowedDataset) -> Result<ForecastTrace> {
    let meta = &windowed.meta;
    let depth = model.spec.architecture.is_3d();
    let expected = model.spec.architecture.input_shape(meta.l, meta.m);
    if model.spec.input_shape != expected {
        return Err(EvalError::ShapeMismatch {
            model: model.spec.input_shape.clone(),
            l: meta.l,
            m: meta.m,
        });
    }
    let predictions = (0..windowed.g())
        .into_par_iter()
        .map(|q| model.forward(&windowed.window_tensor(q, depth)))
        .collect::<std::result::Result<Vec<f64>, ModelError>>()?;
    Ok(ForecastTrace {
        predictions,
        targets: windowed.targets.clone(),
        log_indices: meta.target_rows.clone(),
        l: meta.l,
        f: meta.f,
        actual_failure_index: meta.n - 1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Crossing {
    /// Pair index.
    pub q: usize,
    pub log_index: usize,
}

/// First pair whose prediction is at or below `threshold`. `None` means no
/// forecasted failure.
pub fn detect_crossing(trace: &ForecastTrace, threshold: f64) -> Option<Crossing> {
    trace
        .predictions
        .iter()
        .position(|&p| p <= threshold)
        .map(|q| Crossing {
            q,
            log_index: trace.log_indices[q],
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DkResult {
    pub forecast_index: usize,
    pub actual_index: usize,
    /// Negative when the forecast precedes the failure.
    pub dk_logs: i64,
    pub dk_minutes: i64,
}

pub fn compute_dk(forecast_index: usize, actual_index: usize) -> DkResult {
    let dk_logs = forecast_index as i64 - actual_index as i64;
    DkResult {
        forecast_index,
        actual_index,
        dk_logs,
        dk_minutes: dk_logs * LOG_MINUTES,
    }
}

/// Crossing and D_k for a trace, `None` without a crossing.
pub fn trace_dk(trace: &ForecastTrace, threshold: f64) -> Option<DkResult> {
    detect_crossing(trace, threshold).map(|c| compute_dk(c.log_index, trace.actual_failure_index))
}

fn one_decimal(v: f64) -> String {
    let s = format!("{v:.1}");
    s.strip_suffix(".0").map(str::to_string).unwrap_or(s)
}

fn plural(value: &str, unit: &str) -> String {
    if value == "1" {
        format!("1 {unit}")
    } else {
        format!("{value} {unit}s")
    }
}

/// Human-readable disparity: minutes below an hour, hours (one decimal)
/// below a day, days (one decimal) beyond. Negative values read "behind",
/// positive "after"; zero is "0 minutes".
pub fn render_dk(dk_logs: i64) -> String {
    let minutes = dk_logs.unsigned_abs() * LOG_MINUTES as u64;
    if minutes == 0 {
        return "0 minutes".to_string();
    }
    let magnitude = if minutes < 60 {
        plural(&minutes.to_string(), "minute")
    } else if minutes < 24 * 60 {
        plural(&one_decimal(minutes as f64 / 60.0), "hour")
    } else {
        plural(&one_decimal(minutes as f64 / 1440.0), "day")
    };
    let side = if dk_logs < 0 { "behind" } else { "after" };
    format!("{magnitude} {side}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationMethod {
    #[default]
    Pearson,
    Spearman,
}

/// Pearson correlation; 0 when either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "pearson lengths");
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

/// Ranks from 1, ties sharing their average rank.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

/// M × M column correlations of an N × M matrix, unit diagonal.
pub fn correlation_matrix(matrix: &Tensor, method: CorrelationMethod) -> Result<Vec<Vec<f64>>> {
    let (n, m) = match *matrix.shape() {
        [n, m] => (n, m),
        _ => return Err(EvalError::NotEnoughLogs(0)),
    };
    if n < 2 {
        return Err(EvalError::NotEnoughLogs(n));
    }
    let data = matrix.data();
    let mut columns: Vec<Vec<f64>> = (0..m).map(|j| (0..n).map(|i| data[i * m + j]).collect()).collect();
    if method == CorrelationMethod::Spearman {
        columns = columns.iter().map(|c| ranks(c)).collect();
    }
    let mut out = vec![vec![0.0; m]; m];
    for i in 0..m {
        out[i][i] = 1.0;
        for j in i + 1..m {
            let r = pearson(&columns[i], &columns[j]);
            out[i][j] = r;
            out[j][i] = r;
        }
    }
    Ok(out)
}
