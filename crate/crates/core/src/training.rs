//! Leave-one-failure-out training with per-epoch evaluation on the held-out
//! failure and a checkpoint policy that only keeps epochs whose forecast
//! crosses at or before the actual failure.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::evaluation::{forecast, trace_dk, EvalError};
use crate::io_util::write_atomic;
use crate::models::{build, Model, ModelError, ModelSpec};
use crate::preprocess::WindowedDataset;
use crate::tensor::{adam_step, AdamConfig, AdamState, Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("no training pairs outside the target failure")]
    NoTrainingData,
    #[error("target failure {0} not among the datasets")]
    TargetNotFound(u32),
    #[error("training loss diverged in epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("inconsistent datasets: {0}")]
    Inconsistent(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// What "best" means among eligible epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    /// Smallest |D_k|.
    #[default]
    MinAbsDk,
    /// Smallest RMSE on the held-out failure.
    MinTestRmse,
}

/// Which epochs may be kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HoldoutPolicy {
    /// Only epochs whose held-out forecast crosses at or before the actual
    /// failure, ranked by [`Selection`]. Uses the held-out failure.
    #[default]
    Target,
    /// Lowest training RMSE over all epochs; never looks at the held-out
    /// failure.
    LeakageFree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub shuffle: bool,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Crossing threshold on the scaled RUL axis.
    pub threshold: f64,
    pub selection: Selection,
    pub holdout_policy: HoldoutPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            adam: AdamConfig::default(),
            seed: 0,
            shuffle: true,
            clip_norm: Some(5.0),
            threshold: 0.0,
            selection: Selection::MinAbsDk,
            holdout_policy: HoldoutPolicy::Target,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("epochs and batch_size must be at least 1".into()));
        }
        if !(0.0..).contains(&self.adam.lr) || self.adam.epsilon.is_nan() || self.adam.epsilon <= 0.0 {
            return Err(TrainError::InvalidConfig("lr must be >= 0 and epsilon > 0".into()));
        }
        if self.clip_norm.is_some_and(|c| c.is_nan() || c <= 0.0) {
            return Err(TrainError::InvalidConfig("clip_norm must be positive".into()));
        }
        Ok(())
    }
}

/// A training pair: window `q` of `datasets[dataset]`, tagged with the
/// failure it came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairRef {
    pub dataset: usize,
    pub q: usize,
    pub origin: u32,
}

/// All pairs of every dataset except `target_tag`, in dataset order.
pub fn assemble_training_pairs(datasets: &[WindowedDataset], target_tag: u32) -> Vec<PairRef> {
    datasets
        .iter()
        .enumerate()
        .filter(|(_, d)| d.failure_tag() != target_tag)
        .flat_map(|(i, d)| {
            (0..d.g()).map(move |q| PairRef {
                dataset: i,
                q,
                origin: d.failure_tag(),
            })
        })
        .collect()
}

fn window(model: &Model, datasets: &[WindowedDataset], p: PairRef) -> Tensor {
    datasets[p.dataset].window_tensor(p.q, model.spec.architecture.is_3d())
}

/// RMSE of `model` over `pairs` without updating it.
pub fn pairs_rmse(model: &Model, datasets: &[WindowedDataset], pairs: &[PairRef]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(TrainError::NoTrainingData);
    }
    let sq: Vec<f64> = pairs
        .par_iter()
        .map(|&p| {
            let pred = model.forward(&window(model, datasets, p))?;
            let err = pred - datasets[p.dataset].targets[p.q];
            Ok(err * err)
        })
        .collect::<std::result::Result<_, ModelError>>()?;
    Ok((sq.iter().sum::<f64>() / sq.len() as f64).sqrt())
}

fn clip(grads: &mut [Tensor], max_norm: f64) {
    let norm = grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt();
    if norm > max_norm {
        let factor = max_norm / norm;
        for g in grads {
            g.scale(factor);
        }
    }
}

/// One pass over `pairs` in `order` (indices into `pairs`) with MSE
/// gradients averaged per batch and one Adam step per batch. Returns the
/// epoch RMSE: the root of the mean squared error of each sample at the
/// moment it was trained on.
pub fn train_epoch(
    model: &mut Model,
    adam: &mut AdamState,
    datasets: &[WindowedDataset],
    pairs: &[PairRef],
    order: &[usize],
    cfg: &TrainConfig,
) -> Result<f64> {
    if pairs.is_empty() || order.is_empty() {
        return Err(TrainError::NoTrainingData);
    }
    let mut squared = vec![0.0; pairs.len()];
    for batch in order.chunks(cfg.batch_size) {
        let b = batch.len() as f64;
        let snapshot: &Model = model;
        let results: Vec<(f64, Vec<Tensor>)> = batch
            .par_iter()
            .map(|&i| {
                let p = pairs[i];
                let y = datasets[p.dataset].targets[p.q];
                let (pred, grads) = snapshot.forward_backward(&window(snapshot, datasets, p), |pred| 2.0 * (pred - y) / b)?;
                Ok((pred - y, grads))
            })
            .collect::<std::result::Result<_, ModelError>>()?;
        let mut total: Option<Vec<Tensor>> = None;
        for (&i, (err, grads)) in batch.iter().zip(results) {
            squared[i] = err * err;
            match &mut total {
                None => total = Some(grads),
                Some(t) => {
                    for (acc, g) in t.iter_mut().zip(&grads) {
                        acc.add_assign(g);
                    }
                }
            }
        }
        let mut grads = total.expect("non-empty batch");
        if let Some(c) = cfg.clip_norm {
            clip(&mut grads, c);
        }
        adam_step(&mut model.params.tensors, &grads, adam).map_err(ModelError::from)?;
    }
    let rmse = (order.iter().map(|&i| squared[i]).sum::<f64>() / order.len() as f64).sqrt();
    Ok(rmse)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_rmse: f64,
    pub test_rmse: f64,
    /// `None` when the held-out forecast never crossed the threshold.
    pub test_dk_logs: Option<i64>,
    pub qualified: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub target_failure_tag: u32,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch of `best_model`.
    pub best_epoch: Option<usize>,
    pub best_model: Option<Model>,
    pub final_model: Model,
    pub policy: HoldoutPolicy,
    /// Failure tags whose pairs were trained on.
    pub trained_on: Vec<u32>,
}

impl TrainOutcome {
    pub fn best_record(&self) -> Option<&EpochRecord> {
        self.best_epoch.map(|e| &self.epochs[e - 1])
    }
}

fn check_datasets(datasets: &[WindowedDataset], target_tag: u32, spec: &ModelSpec) -> Result<usize> {
    let target = datasets
        .iter()
        .position(|d| d.failure_tag() == target_tag)
        .ok_or(TrainError::TargetNotFound(target_tag))?;
    if datasets.len() < 2 {
        return Err(TrainError::NoTrainingData);
    }
    let first = &datasets[0].meta;
    for d in datasets {
        let m = &d.meta;
        if (m.l, m.f, m.m) != (first.l, first.f, first.m) {
            return Err(TrainError::Inconsistent(format!(
                "failure {} has (l, f, M) = ({}, {}, {}), failure {} has ({}, {}, {})",
                m.failure_tag, m.l, m.f, m.m, first.failure_tag, first.l, first.f, first.m
            )));
        }
    }
    let expected = spec.architecture.input_shape(first.l, first.m);
    if spec.input_shape != expected {
        return Err(TrainError::Inconsistent(format!(
            "model input {:?}, windows need {:?}",
            spec.input_shape, expected
        )));
    }
    Ok(target)
}

/// Trains on every dataset except `target_tag` and evaluates on the target
/// after each epoch.
pub fn train_leave_one_out(
    datasets: &[WindowedDataset],
    target_tag: u32,
    spec: &ModelSpec,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let target = check_datasets(datasets, target_tag, spec)?;
    let pairs = assemble_training_pairs(datasets, target_tag);
    if pairs.is_empty() {
        return Err(TrainError::NoTrainingData);
    }
    let mut trained_on: Vec<u32> = pairs.iter().map(|p| p.origin).collect();
    trained_on.dedup();

    let mut model = build(spec)?;
    let mut adam = AdamState::new(cfg.adam, &model.params.tensors);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Model)> = None;

    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let train_rmse = match train_epoch(&mut model, &mut adam, datasets, &pairs, &order, cfg) {
            Ok(r) if r.is_finite() => r,
            Ok(_) | Err(TrainError::Model(ModelError::NonFiniteActivation(_))) => {
                return Err(TrainError::DivergedLoss { epoch })
            }
            Err(TrainError::Model(ModelError::Tensor(TensorError::NonFiniteGradient { .. }))) => {
                return Err(TrainError::DivergedLoss { epoch })
            }
            Err(e) => return Err(e),
        };
        let trace = forecast(&model, &datasets[target]).map_err(|e| match e {
            EvalError::Model(ModelError::NonFiniteActivation(_)) => TrainError::DivergedLoss { epoch },
            other => other.into(),
        })?;
        let dk = trace_dk(&trace, cfg.threshold);
        let record = EpochRecord {
            epoch,
            train_rmse,
            test_rmse: trace.rmse(),
            test_dk_logs: dk.map(|d| d.dk_logs),
            qualified: dk.is_some_and(|d| d.dk_logs <= 0),
        };
        log::info!(
            "target {target_tag} epoch {epoch}: train rmse {:.5}, test rmse {:.5}, D_k {:?}",
            record.train_rmse,
            record.test_rmse,
            record.test_dk_logs
        );
        let score = match cfg.holdout_policy {
            HoldoutPolicy::Target if record.qualified => Some(match cfg.selection {
                Selection::MinAbsDk => record.test_dk_logs.expect("qualified").unsigned_abs() as f64,
                Selection::MinTestRmse => record.test_rmse,
            }),
            HoldoutPolicy::Target => None,
            HoldoutPolicy::LeakageFree => Some(record.train_rmse),
        };
        if let Some(score) = score {
            if best.as_ref().is_none_or(|(_, s, _)| score < *s) {
                best = Some((epoch, score, model.clone()));
            }
        }
        epochs.push(record);
    }
    let (best_epoch, best_model) = match best {
        Some((e, _, m)) => (Some(e), Some(m)),
        None => (None, None),
    };
    Ok(TrainOutcome {
        target_failure_tag: target_tag,
        epochs,
        best_epoch,
        best_model,
        final_model: model,
        policy: cfg.holdout_policy,
        trained_on,
    })
}

/// `epoch,train_rmse,test_dk_logs,qualified`; an empty `test_dk_logs`
/// means no crossing.
pub fn train_log_csv(records: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_rmse,test_dk_logs,qualified\n");
    for r in records {
        let dk = r.test_dk_logs.map(|d| d.to_string()).unwrap_or_default();
        s.push_str(&format!("{},{:?},{},{}\n", r.epoch, r.train_rmse, dk, r.qualified));
    }
    s
}

pub fn write_train_log(path: &Path, records: &[EpochRecord]) -> Result<()> {
    write_atomic(path, train_log_csv(records).as_bytes()).map_err(|source| TrainError::Io {
        path: path.display().to_string(),
        source,
    })
}
