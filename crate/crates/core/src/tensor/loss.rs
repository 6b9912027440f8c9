use super::{shape_err, Result, TensorError};

fn check(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.is_empty() {
        return Err(TensorError::EmptyBatch);
    }
    if pred.len() != target.len() {
        return Err(shape_err(
            "loss",
            format!("{} predictions vs {} targets", pred.len(), target.len()),
        ));
    }
    Ok(())
}

pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check(pred, target)?;
    let sum: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / pred.len() as f64)
}

/// Root mean squared error. Training descends on MSE, which has the same
/// minimizer; RMSE is what gets reported.
pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    mse(pred, target).map(f64::sqrt)
}

/// d(MSE)/d(pred).
pub fn mse_grad(pred: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    check(pred, target)?;
    let n = pred.len() as f64;
    Ok(pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect())
}
