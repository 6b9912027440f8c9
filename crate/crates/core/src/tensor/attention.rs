//! Parameter-free attention primitives.

use super::gemm::{gemm, MatRef};
use super::{expect_rank, shape_err, Result, Tensor};

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Self-attention with query = key = value = `h`.
///
/// `scores = scale · h hᵀ`, `weights = softmax(scores)` row-wise,
/// `out = weights · h`. Returns the output and the `T × T` weights.
pub fn dot_attention(h: &Tensor, scale: f64) -> Result<(Tensor, Tensor)> {
    expect_rank("dot_attention", h, 2)?;
    let (steps, units) = (h.shape()[0], h.shape()[1]);
    let hm = MatRef::new(h.data(), steps, units);
    let mut weights = vec![0.0; steps * steps];
    gemm(scale, hm, hm.t(), 0.0, &mut weights);
    for row in weights.chunks_exact_mut(steps) {
        softmax_in_place(row);
    }
    let mut out = vec![0.0; steps * units];
    gemm(1.0, MatRef::new(&weights, steps, steps), hm, 0.0, &mut out);
    Ok((
        Tensor::new(&[steps, units], out)?,
        Tensor::new(&[steps, steps], weights)?,
    ))
}

/// Gradient of [`dot_attention`] with respect to `h`.
pub fn dot_attention_backward(h: &Tensor, weights: &Tensor, scale: f64, grad_output: &Tensor) -> Result<Tensor> {
    let (steps, units) = (h.shape()[0], h.shape()[1]);
    if grad_output.shape() != h.shape() || weights.shape() != [steps, steps] {
        return Err(shape_err("dot_attention_backward", "gradient shape differs from output"));
    }
    let hm = MatRef::new(h.data(), steps, units);
    let gm = MatRef::new(grad_output.data(), steps, units);
    let wm = MatRef::new(weights.data(), steps, steps);

    // Value path: dh = Wᵀ · dOut.
    let mut dh = vec![0.0; steps * units];
    gemm(1.0, wm.t(), gm, 0.0, &mut dh);

    // dW = dOut · hᵀ, then through the row softmax.
    let mut ds = vec![0.0; steps * steps];
    gemm(1.0, gm, hm.t(), 0.0, &mut ds);
    for (ds_row, w_row) in ds.chunks_exact_mut(steps).zip(weights.data().chunks_exact(steps)) {
        let dot: f64 = ds_row.iter().zip(w_row).map(|(a, b)| a * b).sum();
        for (d, w) in ds_row.iter_mut().zip(w_row) {
            *d = w * (*d - dot) * scale;
        }
    }
    // Query and key paths: dh += dS · h + dSᵀ · h.
    let dsm = MatRef::new(&ds, steps, steps);
    gemm(1.0, dsm, hm, 1.0, &mut dh);
    gemm(1.0, dsm.t(), hm, 1.0, &mut dh);
    Tensor::new(&[steps, units], dh)
}

/// Softmax over every cell of an `H × W × 1` map.
pub fn spatial_softmax(map: &Tensor) -> Result<Tensor> {
    expect_rank("spatial_softmax", map, 3)?;
    if map.shape()[2] != 1 {
        return Err(shape_err(
            "spatial_softmax",
            format!("expected a single-channel map, got {:?}", map.shape()),
        ));
    }
    let mut out = map.data().to_vec();
    softmax_in_place(&mut out);
    Tensor::new(map.shape(), out)
}

/// Gradient of [`spatial_softmax`] given its output.
pub fn spatial_softmax_backward(output: &Tensor, grad_output: &Tensor) -> Result<Tensor> {
    if output.shape() != grad_output.shape() {
        return Err(shape_err("spatial_softmax_backward", "gradient shape differs from output"));
    }
    let dot: f64 = output.data().iter().zip(grad_output.data()).map(|(y, g)| y * g).sum();
    Ok(Tensor::from_fn(output.shape(), |i| {
        output.data()[i] * (grad_output.data()[i] - dot)
    }))
}
