//! Run configuration: CLI flag > JSON config file > built-in default.

use std::path::Path;

use rulcast::preprocess::{WindowParams, TWO_WEEKS_LOGS};
use rulcast::tensor::AdamConfig;
use rulcast::training::{HoldoutPolicy, Selection, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const DEFAULT_L: usize = 24;
pub const DEFAULT_F: usize = TWO_WEEKS_LOGS;
pub const DEFAULT_M: usize = rulcast::ingest::DEFAULT_M;
/// Added to `l + f` when no explicit `min_logs` is given.
pub const MIN_LOGS_MARGIN: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub l: usize,
    pub f: usize,
    pub stride: usize,
    pub m: usize,
    pub min_logs: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub shuffle: bool,
    /// `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub threshold: f64,
    pub selection: Selection,
    pub holdout_policy: HoldoutPolicy,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            l: DEFAULT_L,
            f: DEFAULT_F,
            stride: 1,
            m: DEFAULT_M,
            min_logs: None,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.adam.lr,
            seed: t.seed,
            shuffle: t.shuffle,
            clip_norm: t.clip_norm,
            threshold: t.threshold,
            selection: t.selection,
            holdout_policy: t.holdout_policy,
        }
    }
}

/// Flags that may override the config file. Every field is optional so an
/// absent flag leaves the file (or default) value alone.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Sliding-window length in logs [default: 24]
    #[arg(long)]
    pub l: Option<usize>,
    /// Forecast horizon in logs; 2016 is two weeks of 10-minute logs [default: 2016]
    #[arg(long = "fw", visible_alias = "horizon")]
    pub f: Option<usize>,
    /// Window stride [default: 1]
    #[arg(long)]
    pub stride: Option<usize>,
    /// Training epochs [default: 10]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Mini-batch size [default: 32]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam learning rate [default: 0.001]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Seed for weight init and batch shuffling [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Crossing threshold on the scaled RUL axis [default: 0]
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Global gradient-norm cap, 0 disables [default: 5]
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Checkpoint selection among qualified epochs [default: min-abs-dk]
    #[arg(long, value_parser = ["min-abs-dk", "min-test-rmse"])]
    pub selection: Option<String>,
    /// `target` selects on the held-out failure, `leakage-free` on training RMSE [default: target]
    #[arg(long, value_parser = ["target", "leakage-free"])]
    pub holdout_policy: Option<String>,
}

fn kebab<T: for<'de> Deserialize<'de>>(s: &str) -> T {
    serde_json::from_value(serde_json::Value::String(s.to_string())).expect("value_parser restricts the choices")
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig, CliError> {
        let mut cfg = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::usage(format!("config {}: {e}", p.display())))?
            }
        };
        let o = overrides;
        if let Some(v) = o.l {
            cfg.l = v;
        }
        if let Some(v) = o.f {
            cfg.f = v;
        }
        if let Some(v) = o.stride {
            cfg.stride = v;
        }
        if let Some(v) = o.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = o.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = o.lr {
            cfg.lr = v;
        }
        if let Some(v) = o.seed {
            cfg.seed = v;
        }
        if let Some(v) = o.threshold {
            cfg.threshold = v;
        }
        if let Some(v) = o.clip_norm {
            cfg.clip_norm = (v > 0.0).then_some(v);
        }
        if let Some(v) = &o.selection {
            cfg.selection = kebab(v);
        }
        if let Some(v) = &o.holdout_policy {
            cfg.holdout_policy = kebab(v);
        }
        cfg.train().validate().map_err(|e| CliError::usage(e.to_string()))?;
        if cfg.l == 0 || cfg.stride == 0 {
            return Err(CliError::usage("l and stride must be at least 1"));
        }
        Ok(cfg)
    }

    pub fn window(&self) -> WindowParams {
        WindowParams {
            l: self.l,
            f: self.f,
            stride: self.stride,
        }
    }

    pub fn min_logs(&self) -> usize {
        self.min_logs.unwrap_or(self.l + self.f + MIN_LOGS_MARGIN)
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: AdamConfig {
                lr: self.lr,
                ..Default::default()
            },
            seed: self.seed,
            shuffle: self.shuffle,
            clip_norm: self.clip_norm,
            threshold: self.threshold,
            selection: self.selection,
            holdout_policy: self.holdout_policy,
        }
    }
}
