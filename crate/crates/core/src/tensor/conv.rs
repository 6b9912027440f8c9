//! Valid-padding, stride-1 convolutions in channels-last layout.
//!
//! `conv1d` never materializes the unfolded input: window `t` of an
//! `L × C_in` row-major input is the contiguous run starting at `t * C_in`,
//! so the unfold is a strided view with overlapping rows. `conv2d` builds an
//! explicit im2col buffer.

use super::gemm::{gemm, MatRef};
use super::{expect_rank, shape_err, Activation, Result, Tensor};

/// Gradients of a convolution with respect to its input, kernel and bias.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

fn conv1d_dims(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize, usize)> {
    expect_rank("conv1d", input, 2)?;
    expect_rank("conv1d", weights, 3)?;
    let (len, c_in) = (input.shape()[0], input.shape()[1]);
    let (k, wc_in, c_out) = (weights.shape()[0], weights.shape()[1], weights.shape()[2]);
    if wc_in != c_in {
        return Err(shape_err(
            "conv1d",
            format!("input has {c_in} channels, kernel expects {wc_in}"),
        ));
    }
    if bias.shape() != [c_out] {
        return Err(shape_err("conv1d", format!("bias {:?} for {c_out} filters", bias.shape())));
    }
    if len < k {
        return Err(shape_err("conv1d", format!("length {len} shorter than kernel {k}")));
    }
    Ok((len, c_in, k, c_out))
}

/// `out[t, o] = act(Σ_{k,c} input[t+k, c] · weights[k, c, o] + bias[o])`.
pub fn conv1d(input: &Tensor, weights: &Tensor, bias: &Tensor, act: Activation) -> Result<Tensor> {
    let (len, c_in, k, c_out) = conv1d_dims(input, weights, bias)?;
    let out_len = len - k + 1;
    let mut out = Vec::with_capacity(out_len * c_out);
    for _ in 0..out_len {
        out.extend_from_slice(bias.data());
    }
    let unfolded = MatRef::strided(input.data(), out_len, k * c_in, c_in);
    gemm(1.0, unfolded, MatRef::new(weights.data(), k * c_in, c_out), 1.0, &mut out);
    for v in &mut out {
        *v = act.apply(*v);
    }
    Tensor::new(&[out_len, c_out], out)
}

/// Backward pass of [`conv1d`]; `output` is the forward result.
pub fn conv1d_backward(
    input: &Tensor,
    weights: &Tensor,
    output: &Tensor,
    grad_output: &Tensor,
    act: Activation,
) -> Result<ConvGrads> {
    let bias_shape = [weights.shape()[2]];
    let (len, c_in, k, c_out) = conv1d_dims(input, weights, &Tensor::zeros(&bias_shape))?;
    let out_len = len - k + 1;
    if grad_output.shape() != [out_len, c_out] || output.shape() != grad_output.shape() {
        return Err(shape_err("conv1d_backward", "gradient shape differs from output"));
    }
    let mut g = grad_output.data().to_vec();
    act.backprop(output.data(), &mut g);
    let g_mat = MatRef::new(&g, out_len, c_out);

    let mut d_weight = vec![0.0; k * c_in * c_out];
    let unfolded = MatRef::strided(input.data(), out_len, k * c_in, c_in);
    gemm(1.0, unfolded.t(), g_mat, 0.0, &mut d_weight);

    let mut d_bias = vec![0.0; c_out];
    for row in g.chunks_exact(c_out) {
        for (b, v) in d_bias.iter_mut().zip(row) {
            *b += v;
        }
    }

    let mut d_unfolded = vec![0.0; out_len * k * c_in];
    gemm(
        1.0,
        g_mat,
        MatRef::new(weights.data(), k * c_in, c_out).t(),
        0.0,
        &mut d_unfolded,
    );
    let mut d_input = vec![0.0; len * c_in];
    for (t, row) in d_unfolded.chunks_exact(k * c_in).enumerate() {
        let dst = &mut d_input[t * c_in..t * c_in + k * c_in];
        for (d, v) in dst.iter_mut().zip(row) {
            *d += v;
        }
    }

    Ok(ConvGrads {
        input: Tensor::new(&[len, c_in], d_input)?,
        weight: Tensor::new(weights.shape(), d_weight)?,
        bias: Tensor::new(&bias_shape, d_bias)?,
    })
}

struct Conv2dDims {
    h: usize,
    w: usize,
    c_in: usize,
    k: usize,
    c_out: usize,
    out_h: usize,
    out_w: usize,
}

fn conv2d_dims(input: &Tensor, weights: &Tensor) -> Result<Conv2dDims> {
    expect_rank("conv2d", input, 3)?;
    expect_rank("conv2d", weights, 4)?;
    let s = input.shape();
    let ws = weights.shape();
    let (h, w, c_in) = (s[0], s[1], s[2]);
    let (k, c_out) = (ws[0], ws[3]);
    if ws[1] != k || ws[2] != c_in {
        return Err(shape_err(
            "conv2d",
            format!("kernel {ws:?} incompatible with input {s:?}"),
        ));
    }
    if h < k || w < k {
        return Err(shape_err("conv2d", format!("input {s:?} smaller than kernel {k}")));
    }
    Ok(Conv2dDims {
        h,
        w,
        c_in,
        k,
        c_out,
        out_h: h - k + 1,
        out_w: w - k + 1,
    })
}

/// im2col buffer: one row per output cell, columns ordered `(di, dj, c)` to
/// match the `K × K × C_in × C_out` kernel layout.
fn im2col(input: &[f64], d: &Conv2dDims) -> Vec<f64> {
    let seg = d.k * d.c_in;
    let row_len = d.k * seg;
    let mut cols = vec![0.0; d.out_h * d.out_w * row_len];
    for i in 0..d.out_h {
        for j in 0..d.out_w {
            let row = &mut cols[(i * d.out_w + j) * row_len..][..row_len];
            for di in 0..d.k {
                let src = ((i + di) * d.w + j) * d.c_in;
                row[di * seg..(di + 1) * seg].copy_from_slice(&input[src..src + seg]);
            }
        }
    }
    cols
}

/// 2-D analogue of [`conv1d`] on an `H × W × C_in` input.
pub fn conv2d(input: &Tensor, weights: &Tensor, bias: &Tensor, act: Activation) -> Result<Tensor> {
    let d = conv2d_dims(input, weights)?;
    if bias.shape() != [d.c_out] {
        return Err(shape_err("conv2d", format!("bias {:?} for {} filters", bias.shape(), d.c_out)));
    }
    let cells = d.out_h * d.out_w;
    let patch = d.k * d.k * d.c_in;
    let mut out = Vec::with_capacity(cells * d.c_out);
    for _ in 0..cells {
        out.extend_from_slice(bias.data());
    }
    if d.k == 1 {
        gemm(
            1.0,
            MatRef::new(input.data(), cells, patch),
            MatRef::new(weights.data(), patch, d.c_out),
            1.0,
            &mut out,
        );
    } else {
        let cols = im2col(input.data(), &d);
        gemm(
            1.0,
            MatRef::new(&cols, cells, patch),
            MatRef::new(weights.data(), patch, d.c_out),
            1.0,
            &mut out,
        );
    }
    for v in &mut out {
        *v = act.apply(*v);
    }
    Tensor::new(&[d.out_h, d.out_w, d.c_out], out)
}

/// Backward pass of [`conv2d`]; `output` is the forward result.
pub fn conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    output: &Tensor,
    grad_output: &Tensor,
    act: Activation,
) -> Result<ConvGrads> {
    let d = conv2d_dims(input, weights)?;
    let cells = d.out_h * d.out_w;
    let patch = d.k * d.k * d.c_in;
    if grad_output.shape() != [d.out_h, d.out_w, d.c_out] || output.shape() != grad_output.shape() {
        return Err(shape_err("conv2d_backward", "gradient shape differs from output"));
    }
    let mut g = grad_output.data().to_vec();
    act.backprop(output.data(), &mut g);
    let g_mat = MatRef::new(&g, cells, d.c_out);

    let owned_cols;
    let cols: &[f64] = if d.k == 1 {
        input.data()
    } else {
        owned_cols = im2col(input.data(), &d);
        &owned_cols
    };
    let mut d_weight = vec![0.0; patch * d.c_out];
    gemm(1.0, MatRef::new(cols, cells, patch).t(), g_mat, 0.0, &mut d_weight);

    let mut d_bias = vec![0.0; d.c_out];
    for row in g.chunks_exact(d.c_out) {
        for (b, v) in d_bias.iter_mut().zip(row) {
            *b += v;
        }
    }

    let mut d_cols = vec![0.0; cells * patch];
    gemm(
        1.0,
        g_mat,
        MatRef::new(weights.data(), patch, d.c_out).t(),
        0.0,
        &mut d_cols,
    );
    let d_input = if d.k == 1 {
        d_cols
    } else {
        let seg = d.k * d.c_in;
        let mut acc = vec![0.0; d.h * d.w * d.c_in];
        for i in 0..d.out_h {
            for j in 0..d.out_w {
                let row = &d_cols[(i * d.out_w + j) * patch..][..patch];
                for di in 0..d.k {
                    let dst = ((i + di) * d.w + j) * d.c_in;
                    for (a, v) in acc[dst..dst + seg].iter_mut().zip(&row[di * seg..(di + 1) * seg]) {
                        *a += v;
                    }
                }
            }
        }
        acc
    };

    Ok(ConvGrads {
        input: Tensor::new(input.shape(), d_input)?,
        weight: Tensor::new(weights.shape(), d_weight)?,
        bias: Tensor::new(&[d.c_out], d_bias)?,
    })
}
