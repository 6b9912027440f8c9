//! Central finite-difference oracle shared by the gradient tests and the
//! acceptance suite. It only evaluates forward passes; the analytic
//! gradients it is compared against come from the code under test.

#![allow(dead_code)]

use rand::Rng;
use rulcast::tensor::Tensor;

pub const STEP: f64 = 1e-5;
pub const MAX_REL_ERR: f64 = 1e-4;
/// Relative error is measured against at least this magnitude, so that
/// gradients that are zero up to rounding do not divide by ~0.
pub const REL_FLOOR: f64 = 1e-6;

/// Result of one forward evaluation: scalar loss plus the ReLU sign
/// pattern of the pass (empty when the function has no ReLU).
pub struct Eval {
    pub loss: f64,
    pub pattern: Vec<bool>,
}

#[derive(Debug, Default, Clone)]
pub struct Report {
    pub checked: usize,
    /// Coordinates whose ±h perturbation crossed a ReLU kink.
    pub skipped: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

impl Report {
    pub fn merge(&mut self, other: &Report) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        if other.max_rel_err > self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst.clone();
        }
    }

    pub fn passed(&self) -> bool {
        self.checked > 0
            && self.max_rel_err <= MAX_REL_ERR
            && self.skipped * 10 <= self.checked + self.skipped
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares `analytic[t]` against central differences of `f` for the
/// coordinates `coords[t]` of each input tensor `t`.
pub fn check(
    label: &str,
    inputs: &[Tensor],
    analytic: &[Tensor],
    coords: &[Vec<usize>],
    mut f: impl FnMut(&[Tensor]) -> Eval,
) -> Report {
    let mut report = Report::default();
    let mut work = inputs.to_vec();
    for (t, idxs) in coords.iter().enumerate() {
        for &i in idxs {
            let orig = work[t].data()[i];
            work[t].data_mut()[i] = orig + STEP;
            let hi = f(&work);
            work[t].data_mut()[i] = orig - STEP;
            let lo = f(&work);
            work[t].data_mut()[i] = orig;
            if hi.pattern != lo.pattern {
                report.skipped += 1;
                continue;
            }
            let numeric = (hi.loss - lo.loss) / (2.0 * STEP);
            let a = analytic[t].data()[i];
            let err = rel_err(a, numeric);
            report.checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = format!("{label}: tensor {t} index {i}: analytic {a:e} numeric {numeric:e}");
            }
        }
    }
    report
}

/// Every coordinate of every tensor.
pub fn all_coords(inputs: &[Tensor]) -> Vec<Vec<usize>> {
    inputs.iter().map(|t| (0..t.len()).collect()).collect()
}

/// Up to `per_tensor` random coordinates of each tensor.
pub fn sample_coords<R: Rng>(rng: &mut R, inputs: &[Tensor], per_tensor: usize) -> Vec<Vec<usize>> {
    inputs
        .iter()
        .map(|t| {
            if t.len() <= per_tensor {
                (0..t.len()).collect()
            } else {
                (0..per_tensor).map(|_| rng.gen_range(0..t.len())).collect()
            }
        })
        .collect()
}

pub fn random_tensor<R: Rng>(rng: &mut R, shape: &[usize], scale: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

/// `Σ out ⊙ proj`, the scalar used to probe a tensor-valued primitive.
pub fn project(out: &Tensor, proj: &Tensor) -> f64 {
    out.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
}

pub fn relu_pattern(t: &Tensor) -> Vec<bool> {
    t.data().iter().map(|&v| v > 0.0).collect()
}
