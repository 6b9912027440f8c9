//! Single-layer LSTM returning the full hidden-state sequence.
//!
//! Parameters follow the Keras layout: `kernel` is `D × 4U`, `recurrent`
//! is `U × 4U`, `bias` is `4U`, with gate blocks ordered input, forget,
//! cell candidate, output. The initial hidden and cell states are zero.

use super::gemm::{gemm, MatRef};
use super::{expect_rank, shape_err, Result, Tensor};

/// Forward activations kept for backpropagation through time.
#[derive(Debug, Clone)]
pub struct LstmCache {
    /// Post-activation gates per step, `T × 4U`.
    gates: Vec<f64>,
    /// Cell state per step, `T × U`.
    cells: Vec<f64>,
    /// Hidden state per step, `T × U` (the layer output).
    hidden: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LstmGrads {
    pub input: Tensor,
    pub kernel: Tensor,
    pub recurrent: Tensor,
    pub bias: Tensor,
}

/// `4 · ((D + U) · U + U)`.
pub fn lstm_param_count(input_dim: usize, units: usize) -> usize {
    4 * ((input_dim + units) * units + units)
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dims(input: &Tensor, kernel: &Tensor, recurrent: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize)> {
    expect_rank("lstm", input, 2)?;
    let (steps, d) = (input.shape()[0], input.shape()[1]);
    if kernel.rank() != 2 || kernel.shape()[0] != d || !kernel.shape()[1].is_multiple_of(4) {
        return Err(shape_err("lstm", format!("kernel {:?} for input dim {d}", kernel.shape())));
    }
    let u = kernel.shape()[1] / 4;
    if recurrent.shape() != [u, 4 * u] || bias.shape() != [4 * u] {
        return Err(shape_err(
            "lstm",
            format!("recurrent {:?} / bias {:?} for {u} units", recurrent.shape(), bias.shape()),
        ));
    }
    Ok((steps, d, u))
}

/// Runs the LSTM over a `T × D` sequence, returning `T × U` hidden states.
pub fn lstm(input: &Tensor, kernel: &Tensor, recurrent: &Tensor, bias: &Tensor) -> Result<(Tensor, LstmCache)> {
    let (steps, d, u) = dims(input, kernel, recurrent, bias)?;
    let g4 = 4 * u;
    // Input projections for all steps at once.
    let mut gates = Vec::with_capacity(steps * g4);
    for _ in 0..steps {
        gates.extend_from_slice(bias.data());
    }
    gemm(
        1.0,
        MatRef::new(input.data(), steps, d),
        MatRef::new(kernel.data(), d, g4),
        1.0,
        &mut gates,
    );

    let mut cells = vec![0.0; steps * u];
    let mut hidden = vec![0.0; steps * u];
    for t in 0..steps {
        let z = &mut gates[t * g4..(t + 1) * g4];
        if t > 0 {
            let h_prev = &hidden[(t - 1) * u..t * u];
            gemm(
                1.0,
                MatRef::new(h_prev, 1, u),
                MatRef::new(recurrent.data(), u, g4),
                1.0,
                z,
            );
        }
        for j in 0..u {
            let i_g = sigmoid(z[j]);
            let f_g = sigmoid(z[u + j]);
            let c_g = z[2 * u + j].tanh();
            let o_g = sigmoid(z[3 * u + j]);
            z[j] = i_g;
            z[u + j] = f_g;
            z[2 * u + j] = c_g;
            z[3 * u + j] = o_g;
            let c_prev = if t > 0 { cells[(t - 1) * u + j] } else { 0.0 };
            let c = f_g * c_prev + i_g * c_g;
            cells[t * u + j] = c;
            hidden[t * u + j] = o_g * c.tanh();
        }
    }
    let out = Tensor::new(&[steps, u], hidden.clone())?;
    Ok((out, LstmCache { gates, cells, hidden }))
}

/// Backpropagation through time for [`lstm`].
pub fn lstm_backward(
    input: &Tensor,
    kernel: &Tensor,
    recurrent: &Tensor,
    cache: &LstmCache,
    grad_output: &Tensor,
) -> Result<LstmGrads> {
    let bias_shape = [kernel.shape()[1]];
    let (steps, d, u) = dims(input, kernel, recurrent, &Tensor::zeros(&bias_shape))?;
    if grad_output.shape() != [steps, u] {
        return Err(shape_err("lstm_backward", "gradient shape differs from output"));
    }
    let g4 = 4 * u;
    let LstmCache { gates, cells, hidden } = cache;
    let mut dz = vec![0.0; steps * g4];
    let mut dh_next = vec![0.0; u];
    let mut dc_next = vec![0.0; u];
    for t in (0..steps).rev() {
        let gate = &gates[t * g4..(t + 1) * g4];
        let dzt = &mut dz[t * g4..(t + 1) * g4];
        for j in 0..u {
            let (i_g, f_g, c_g, o_g) = (gate[j], gate[u + j], gate[2 * u + j], gate[3 * u + j]);
            let c = cells[t * u + j];
            let tc = c.tanh();
            let c_prev = if t > 0 { cells[(t - 1) * u + j] } else { 0.0 };
            let dh = grad_output.data()[t * u + j] + dh_next[j];
            let dc = dh * o_g * (1.0 - tc * tc) + dc_next[j];
            dzt[j] = dc * c_g * i_g * (1.0 - i_g);
            dzt[u + j] = dc * c_prev * f_g * (1.0 - f_g);
            dzt[2 * u + j] = dc * i_g * (1.0 - c_g * c_g);
            dzt[3 * u + j] = dh * tc * o_g * (1.0 - o_g);
            dc_next[j] = dc * f_g;
        }
        if t > 0 {
            gemm(
                1.0,
                MatRef::new(dzt, 1, g4),
                MatRef::new(recurrent.data(), u, g4).t(),
                0.0,
                &mut dh_next,
            );
        }
    }

    let dz_mat = MatRef::new(&dz, steps, g4);
    let mut d_kernel = vec![0.0; d * g4];
    gemm(1.0, MatRef::new(input.data(), steps, d).t(), dz_mat, 0.0, &mut d_kernel);

    let mut d_recurrent = vec![0.0; u * g4];
    if steps > 1 {
        // h_{t-1} for t = 1..T pairs with dz_t.
        gemm(
            1.0,
            MatRef::new(&hidden[..(steps - 1) * u], steps - 1, u).t(),
            MatRef::new(&dz[g4..], steps - 1, g4),
            0.0,
            &mut d_recurrent,
        );
    }

    let mut d_bias = vec![0.0; g4];
    for row in dz.chunks_exact(g4) {
        for (b, v) in d_bias.iter_mut().zip(row) {
            *b += v;
        }
    }

    let mut d_input = vec![0.0; steps * d];
    gemm(1.0, dz_mat, MatRef::new(kernel.data(), d, g4).t(), 0.0, &mut d_input);

    Ok(LstmGrads {
        input: Tensor::new(&[steps, d], d_input)?,
        kernel: Tensor::new(kernel.shape(), d_kernel)?,
        recurrent: Tensor::new(recurrent.shape(), d_recurrent)?,
        bias: Tensor::new(&bias_shape, d_bias)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_shape_and_count() {
        let x = Tensor::zeros(&[18, 128]);
        let (h, _) = lstm(
            &x,
            &Tensor::zeros(&[128, 256]),
            &Tensor::zeros(&[64, 256]),
            &Tensor::zeros(&[256]),
        )
        .unwrap();
        assert_eq!(h.shape(), &[18, 64]);
        assert_eq!(lstm_param_count(128, 64), 49_408);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let x = Tensor::from_fn(&[5, 3], |i| i as f64 + 1.0);
        let (h, _) = lstm(
            &x,
            &Tensor::zeros(&[3, 8]),
            &Tensor::zeros(&[2, 8]),
            &Tensor::zeros(&[8]),
        )
        .unwrap();
        assert!(h.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_closed_form() {
        // One unit, one input, x = 1, every weight 0.5, zero bias.
        let x = Tensor::new(&[1, 1], vec![1.0]).unwrap();
        let (h, _) = lstm(
            &x,
            &Tensor::filled(&[1, 4], 0.5),
            &Tensor::filled(&[1, 4], 0.5),
            &Tensor::zeros(&[4]),
        )
        .unwrap();
        let s = 1.0 / (1.0 + (-0.5f64).exp());
        let c = s * 0.5f64.tanh();
        assert!((h.data()[0] - s * c.tanh()).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_kernel() {
        let x = Tensor::zeros(&[4, 3]);
        let r = lstm(
            &x,
            &Tensor::zeros(&[2, 8]),
            &Tensor::zeros(&[2, 8]),
            &Tensor::zeros(&[8]),
        );
        assert!(r.is_err());
    }
}
