use super::gemm::{gemm, MatRef};
use super::{expect_rank, shape_err, Activation, Result, Tensor};

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

fn dense_dims(input: &Tensor, weight: &Tensor) -> Result<(usize, usize)> {
    expect_rank("dense", input, 1)?;
    expect_rank("dense", weight, 2)?;
    let d = input.shape()[0];
    if weight.shape()[0] != d {
        return Err(shape_err(
            "dense",
            format!("input length {d}, kernel {:?}", weight.shape()),
        ));
    }
    Ok((d, weight.shape()[1]))
}

/// Affine map of a rank-1 input: `act(x · W + b)`, `W` is `D × units`.
pub fn dense(input: &Tensor, weight: &Tensor, bias: &Tensor, act: Activation) -> Result<Tensor> {
    let (d, units) = dense_dims(input, weight)?;
    if bias.shape() != [units] {
        return Err(shape_err("dense", format!("bias {:?} for {units} units", bias.shape())));
    }
    let mut out = bias.data().to_vec();
    gemm(
        1.0,
        MatRef::new(input.data(), 1, d),
        MatRef::new(weight.data(), d, units),
        1.0,
        &mut out,
    );
    for v in &mut out {
        *v = act.apply(*v);
    }
    Tensor::new(&[units], out)
}

pub fn dense_backward(
    input: &Tensor,
    weight: &Tensor,
    output: &Tensor,
    grad_output: &Tensor,
    act: Activation,
) -> Result<DenseGrads> {
    let (d, units) = dense_dims(input, weight)?;
    if grad_output.shape() != [units] || output.shape() != [units] {
        return Err(shape_err("dense_backward", "gradient shape differs from output"));
    }
    let mut g = grad_output.data().to_vec();
    act.backprop(output.data(), &mut g);
    let mut d_weight = vec![0.0; d * units];
    gemm(
        1.0,
        MatRef::new(input.data(), 1, d).t(),
        MatRef::new(&g, 1, units),
        0.0,
        &mut d_weight,
    );
    let mut d_input = vec![0.0; d];
    gemm(
        1.0,
        MatRef::new(&g, 1, units),
        MatRef::new(weight.data(), d, units).t(),
        0.0,
        &mut d_input,
    );
    Ok(DenseGrads {
        input: Tensor::new(&[d], d_input)?,
        weight: Tensor::new(weight.shape(), d_weight)?,
        bias: Tensor::new(&[units], g)?,
    })
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor::from_fn(x.shape(), |i| x.data()[i].max(0.0))
}

pub fn relu_backward(output: &Tensor, grad_output: &Tensor) -> Tensor {
    let mut g = grad_output.clone();
    Activation::Relu.backprop(output.data(), g.data_mut());
    g
}

fn broadcast_dims(features: &Tensor, weights: &Tensor) -> Result<usize> {
    expect_rank("broadcast_multiply", features, 3)?;
    expect_rank("broadcast_multiply", weights, 3)?;
    let (fs, ws) = (features.shape(), weights.shape());
    if fs[..2] != ws[..2] || ws[2] != 1 {
        return Err(shape_err(
            "broadcast_multiply",
            format!("features {fs:?} vs weights {ws:?}"),
        ));
    }
    Ok(fs[2])
}

/// `out[h, w, c] = features[h, w, c] · weights[h, w, 0]`.
pub fn broadcast_multiply(features: &Tensor, weights: &Tensor) -> Result<Tensor> {
    let c = broadcast_dims(features, weights)?;
    let mut out = features.data().to_vec();
    for (cell, &w) in out.chunks_exact_mut(c).zip(weights.data()) {
        for v in cell {
            *v *= w;
        }
    }
    Tensor::new(features.shape(), out)
}

/// Returns `(d_features, d_weights)`.
pub fn broadcast_multiply_backward(
    features: &Tensor,
    weights: &Tensor,
    grad_output: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let c = broadcast_dims(features, weights)?;
    if grad_output.shape() != features.shape() {
        return Err(shape_err("broadcast_multiply_backward", "gradient shape differs from output"));
    }
    let mut d_features = grad_output.data().to_vec();
    let mut d_weights = vec![0.0; weights.len()];
    for (((dcell, fcell), &w), dw) in d_features
        .chunks_exact_mut(c)
        .zip(features.data().chunks_exact(c))
        .zip(weights.data())
        .zip(d_weights.iter_mut())
    {
        *dw = dcell.iter().zip(fcell).map(|(g, f)| g * f).sum();
        for g in dcell {
            *g *= w;
        }
    }
    Ok((
        Tensor::new(features.shape(), d_features)?,
        Tensor::new(weights.shape(), d_weights)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_scalar_gradient_is_input() {
        let x = Tensor::new(&[1], vec![3.5]).unwrap();
        let w = Tensor::new(&[1, 1], vec![-2.0]).unwrap();
        let b = Tensor::zeros(&[1]);
        let y = dense(&x, &w, &b, Activation::Linear).unwrap();
        assert_eq!(y.data(), &[-7.0]);
        let g = dense_backward(&x, &w, &y, &Tensor::scalar(1.0), Activation::Linear).unwrap();
        assert_eq!(g.weight.data(), &[3.5]);
        assert_eq!(g.input.data(), &[-2.0]);
        assert_eq!(g.bias.data(), &[1.0]);
    }

    #[test]
    fn relu_clips_negatives() {
        let x = Tensor::new(&[2], vec![-1.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 2.0]);
    }

    #[test]
    fn broadcast_identities() {
        let f = Tensor::from_fn(&[20, 78, 32], |i| i as f64);
        let ones = Tensor::filled(&[20, 78, 1], 1.0);
        assert_eq!(broadcast_multiply(&f, &ones).unwrap(), f);

        let w = Tensor::from_fn(&[3, 2, 1], |i| i as f64 * 0.25);
        let out = broadcast_multiply(&Tensor::filled(&[3, 2, 4], 1.0), &w).unwrap();
        for (cell, &wv) in out.data().chunks(4).zip(w.data()) {
            assert!(cell.iter().all(|&v| v == wv));
        }
        assert!(broadcast_multiply(&f, &Tensor::filled(&[20, 77, 1], 1.0)).is_err());
    }
}
