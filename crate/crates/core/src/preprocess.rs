//! From a failure dataset to supervised `(window, RUL)` pairs: linear
//! degradation labels, min-max scaling, the sliding window and the
//! forecasting window.
//!
//! Index conventions (0-based rows of an N-row dataset):
//!
//! * sliding window `z` covers rows `z*s .. z*s + l - 1` and carries the
//!   label of its last row, so stride 1 gives `N - l + 1` windows;
//! * the forecasting window pairs the window ending at row `e` with the
//!   label of row `e + f`, so stride 1 gives `g = N - l - f + 1` pairs and
//!   pair `q` maps to log index `q + l - 1 + f`. The last pair targets row
//!   `N - 1`, whose label is 0.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ingest::FailureDataset;
use crate::io_util::write_atomic;
use crate::tensor::Tensor;

/// Outputs of `minmax_apply` are clamped into this range.
pub const APPLY_CLAMP: (f64, f64) = (-1.0, 2.0);
/// Fourteen days of ten-minute logs.
pub const TWO_WEEKS_LOGS: usize = 14 * 24 * 6;
pub const WINDOWED_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum PreprocessError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite input at row {row}, column {col}")]
    NonFiniteInput { row: usize, col: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("{n} logs is fewer than the window length {l}")]
    NotEnoughLogs { n: usize, l: usize },
    #[error("forecast horizon {f} leaves no pairs ({windows} sliding windows)")]
    HorizonTooLong { windows: usize, f: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed windowed dataset {path}: {detail}")]
    Malformed { path: String, detail: String },
}

pub type Result<T> = std::result::Result<T, PreprocessError>;

/// `[N-1, N-2, ..., 1, 0]`.
pub fn linear_degradation(n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(PreprocessError::EmptyDataset);
    }
    Ok((0..n).rev().map(|v| v as f64).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

fn matrix_dims(matrix: &Tensor) -> Result<(usize, usize)> {
    match *matrix.shape() {
        [n, m] => Ok((n, m)),
        _ => Err(PreprocessError::ShapeMismatch(format!(
            "expected an N x M matrix, got {:?}",
            matrix.shape()
        ))),
    }
}

fn scale_cell(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        (v - lo) / (hi - lo)
    } else {
        0.0
    }
}

/// Per-column min-max scaling; constant columns map to 0.
pub fn minmax_fit_transform(matrix: &Tensor) -> Result<(Tensor, ScalingParams)> {
    let (n, m) = matrix_dims(matrix)?;
    let data = matrix.data();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(PreprocessError::NonFiniteInput { row: i / m, col: i % m });
    }
    let mut min = vec![f64::INFINITY; m];
    let mut max = vec![f64::NEG_INFINITY; m];
    for row in data.chunks_exact(m) {
        for (j, &v) in row.iter().enumerate() {
            min[j] = min[j].min(v);
            max[j] = max[j].max(v);
        }
    }
    let scaled = Tensor::from_fn(&[n, m], |i| {
        let j = i % m;
        // Clamp guards the endpoints against rounding just outside [0, 1].
        scale_cell(data[i], min[j], max[j]).clamp(0.0, 1.0)
    });
    Ok((scaled, ScalingParams { min, max }))
}

/// Scales with frozen parameters, clamping to [`APPLY_CLAMP`].
pub fn minmax_apply(matrix: &Tensor, params: &ScalingParams) -> Result<Tensor> {
    let (n, m) = matrix_dims(matrix)?;
    if params.min.len() != m || params.max.len() != m {
        return Err(PreprocessError::ShapeMismatch(format!(
            "matrix has {m} columns, scaling params {}",
            params.min.len()
        )));
    }
    let data = matrix.data();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(PreprocessError::NonFiniteInput { row: i / m, col: i % m });
    }
    Ok(Tensor::from_fn(&[n, m], |i| {
        let j = i % m;
        scale_cell(data[i], params.min[j], params.max[j]).clamp(APPLY_CLAMP.0, APPLY_CLAMP.1)
    }))
}

/// Scaled matrix plus degradation labels divided by `label_scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub scaled: Tensor,
    pub labels: Vec<f64>,
    /// `N - 1` (1 when N = 1): raw label = scaled label × label_scale.
    pub label_scale: f64,
    pub scaling: ScalingParams,
}

impl LabeledDataset {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn m(&self) -> usize {
        self.scaled.shape()[1]
    }
}

pub fn label_dataset(matrix: &Tensor) -> Result<LabeledDataset> {
    let (n, _) = matrix_dims(matrix)?;
    let raw = linear_degradation(n)?;
    let (scaled, scaling) = minmax_fit_transform(matrix)?;
    let label_scale = (n.max(2) - 1) as f64;
    Ok(LabeledDataset {
        scaled,
        labels: raw.iter().map(|v| v / label_scale).collect(),
        label_scale,
        scaling,
    })
}

/// Sliding-window output: window start rows and the label of each window's
/// last row.
#[derive(Debug, Clone, PartialEq)]
pub struct SlidePairs {
    pub l: usize,
    pub stride: usize,
    pub starts: Vec<usize>,
    pub targets: Vec<f64>,
}

impl SlidePairs {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }
}

/// Window cells `l × M`.
pub fn window_size(l: usize, m: usize) -> usize {
    l * m
}

pub fn slide_window(n: usize, labels: &[f64], l: usize, stride: usize) -> Result<SlidePairs> {
    if l == 0 || stride == 0 {
        return Err(PreprocessError::InvalidParameter(format!(
            "window length {l} and stride {stride} must be positive"
        )));
    }
    if labels.len() != n {
        return Err(PreprocessError::ShapeMismatch(format!("{n} rows, {} labels", labels.len())));
    }
    if n < l {
        return Err(PreprocessError::NotEnoughLogs { n, l });
    }
    let starts: Vec<usize> = (0..=n - l).step_by(stride).collect();
    let targets = starts.iter().map(|&s| labels[s + l - 1]).collect();
    Ok(SlidePairs { l, stride, starts, targets })
}

/// Keeps the windows whose end row plus `f` is still inside the dataset
/// and retargets each to the label `f` rows after its end.
pub fn apply_forecast_window(pairs: &SlidePairs, labels: &[f64], f: usize) -> Result<SlidePairs> {
    let n = labels.len();
    let l = pairs.l;
    let starts: Vec<usize> = pairs.starts.iter().copied().filter(|&s| s + l - 1 + f < n).collect();
    if starts.is_empty() {
        return Err(PreprocessError::HorizonTooLong { windows: pairs.len(), f });
    }
    let targets = starts.iter().map(|&s| labels[s + l - 1 + f]).collect();
    Ok(SlidePairs {
        l,
        stride: pairs.stride,
        starts,
        targets,
    })
}

pub fn expand_depth(window: Tensor) -> Tensor {
    window.expand_depth()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowedMeta {
    pub format_version: u32,
    pub failure_tag: u32,
    pub component: String,
    pub n: usize,
    pub m: usize,
    pub l: usize,
    pub f: usize,
    pub stride: usize,
    pub g: usize,
    pub label_scale: f64,
    pub scaling: ScalingParams,
    /// Log index (0-based row) that each pair's target belongs to.
    pub target_rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
enum Windows {
    /// Contiguous row slices of the scaled matrix.
    Rows { scaled: Tensor, starts: Vec<usize> },
    /// Materialized, `g × l × M`.
    Dense(Vec<f64>),
}

/// Supervised pairs for one failure dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub meta: WindowedMeta,
    windows: Windows,
    pub targets: Vec<f64>,
}

impl WindowedDataset {
    pub fn g(&self) -> usize {
        self.targets.len()
    }

    pub fn failure_tag(&self) -> u32 {
        self.meta.failure_tag
    }

    pub fn window_len(&self) -> usize {
        self.meta.l * self.meta.m
    }

    /// Row-major `l × M` cells of window `q`.
    pub fn window(&self, q: usize) -> &[f64] {
        let len = self.window_len();
        match &self.windows {
            Windows::Rows { scaled, starts } => {
                let off = starts[q] * self.meta.m;
                &scaled.data()[off..off + len]
            }
            Windows::Dense(data) => &data[q * len..(q + 1) * len],
        }
    }

    /// Window `q` as an `l × M` tensor, or `l × M × 1` when `depth`.
    pub fn window_tensor(&self, q: usize, depth: bool) -> Tensor {
        let t = Tensor::new(&[self.meta.l, self.meta.m], self.window(q).to_vec()).expect("window shape");
        if depth {
            expand_depth(t)
        } else {
            t
        }
    }

    /// Log index of pair `q`'s target.
    pub fn target_row(&self, q: usize) -> usize {
        self.meta.target_rows[q]
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let meta = serde_json::to_vec_pretty(&self.meta).expect("metadata serializes");
        write(&dir.join("meta.json"), &meta)?;
        let mut windows = Vec::with_capacity(self.g() * self.window_len() * 8);
        for q in 0..self.g() {
            for v in self.window(q) {
                windows.extend_from_slice(&v.to_le_bytes());
            }
        }
        write(&dir.join("windows.bin"), &windows)?;
        let targets: Vec<u8> = self.targets.iter().flat_map(|v| v.to_le_bytes()).collect();
        write(&dir.join("targets.bin"), &targets)
    }

    pub fn load(dir: &Path) -> Result<WindowedDataset> {
        let bad = |detail: String| PreprocessError::Malformed {
            path: dir.display().to_string(),
            detail,
        };
        let meta: WindowedMeta =
            serde_json::from_slice(&read(&dir.join("meta.json"))?).map_err(|e| bad(e.to_string()))?;
        if meta.format_version != WINDOWED_FORMAT_VERSION {
            return Err(bad(format!("format version {}", meta.format_version)));
        }
        let windows = floats(&read(&dir.join("windows.bin"))?).ok_or_else(|| bad("windows.bin length".into()))?;
        let targets = floats(&read(&dir.join("targets.bin"))?).ok_or_else(|| bad("targets.bin length".into()))?;
        if targets.len() != meta.g || meta.target_rows.len() != meta.g || windows.len() != meta.g * meta.l * meta.m {
            return Err(bad(format!(
                "g = {} but {} targets, {} window cells",
                meta.g,
                targets.len(),
                windows.len()
            )));
        }
        Ok(WindowedDataset {
            meta,
            windows: Windows::Dense(windows),
            targets,
        })
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes).map_err(|source| PreprocessError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| PreprocessError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn floats(bytes: &[u8]) -> Option<Vec<f64>> {
    bytes.len().is_multiple_of(8).then(|| {
        bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowParams {
    pub l: usize,
    pub f: usize,
    pub stride: usize,
}

impl Default for WindowParams {
    fn default() -> Self {
        Self {
            l: 24,
            f: TWO_WEEKS_LOGS,
            stride: 1,
        }
    }
}

/// Label, scale (with the dataset's own statistics) and window one
/// failure dataset.
pub fn prepare(dataset: &FailureDataset, params: WindowParams) -> Result<WindowedDataset> {
    let labeled = label_dataset(&dataset.matrix)?;
    windowed_from_labeled(labeled, dataset.failure_tag, &dataset.component.to_string(), params)
}

pub fn windowed_from_labeled(
    labeled: LabeledDataset,
    failure_tag: u32,
    component: &str,
    params: WindowParams,
) -> Result<WindowedDataset> {
    let WindowParams { l, f, stride } = params;
    let n = labeled.n();
    let slid = slide_window(n, &labeled.labels, l, stride)?;
    let pairs = apply_forecast_window(&slid, &labeled.labels, f)?;
    let meta = WindowedMeta {
        format_version: WINDOWED_FORMAT_VERSION,
        failure_tag,
        component: component.to_string(),
        n,
        m: labeled.m(),
        l,
        f,
        stride,
        g: pairs.len(),
        label_scale: labeled.label_scale,
        scaling: labeled.scaling,
        target_rows: pairs.starts.iter().map(|s| s + l - 1 + f).collect(),
    };
    Ok(WindowedDataset {
        meta,
        windows: Windows::Rows {
            scaled: labeled.scaled,
            starts: pairs.starts,
        },
        targets: pairs.targets,
    })
}
