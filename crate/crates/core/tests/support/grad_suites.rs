//! Per-primitive and whole-model gradient checks, parameterized by seed.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rulcast::models::{build, Architecture, ModelSpec};
use rulcast::tensor::{self, Activation, Graph, Tensor};

use super::gradcheck::{self as gc, Eval, Report};

fn rng(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ salt)
}

fn act_for(r: &mut ChaCha8Rng) -> Activation {
    if r.gen_bool(0.5) {
        Activation::Relu
    } else {
        Activation::Linear
    }
}

fn pattern(act: Activation, out: &Tensor) -> Vec<bool> {
    match act {
        Activation::Relu => gc::relu_pattern(out),
        Activation::Linear => Vec::new(),
    }
}

pub fn conv1d(seed: u64) -> Report {
    let mut r = rng(seed, 1);
    let (k, c_in, c_out) = (r.gen_range(1..=3), r.gen_range(1..=4), r.gen_range(1..=4));
    let len = k + r.gen_range(0..5);
    let act = act_for(&mut r);
    let inputs = vec![
        gc::random_tensor(&mut r, &[len, c_in], 1.0),
        gc::random_tensor(&mut r, &[k, c_in, c_out], 1.0),
        gc::random_tensor(&mut r, &[c_out], 0.5),
    ];
    let out = tensor::conv1d(&inputs[0], &inputs[1], &inputs[2], act).unwrap();
    let proj = gc::random_tensor(&mut r, out.shape(), 1.0);
    let g = tensor::conv1d_backward(&inputs[0], &inputs[1], &out, &proj, act).unwrap();
    let analytic = [g.input, g.weight, g.bias];
    gc::check("conv1d", &inputs, &analytic, &gc::all_coords(&inputs), |x| {
        let o = tensor::conv1d(&x[0], &x[1], &x[2], act).unwrap();
        Eval { loss: gc::project(&o, &proj), pattern: pattern(act, &o) }
    })
}

pub fn conv2d(seed: u64) -> Report {
    let mut r = rng(seed, 2);
    let (k, c_in, c_out) = (r.gen_range(1..=3), r.gen_range(1..=3), r.gen_range(1..=3));
    let (h, w) = (k + r.gen_range(0..3), k + r.gen_range(0..4));
    let act = act_for(&mut r);
    let inputs = vec![
        gc::random_tensor(&mut r, &[h, w, c_in], 1.0),
        gc::random_tensor(&mut r, &[k, k, c_in, c_out], 1.0),
        gc::random_tensor(&mut r, &[c_out], 0.5),
    ];
    let out = tensor::conv2d(&inputs[0], &inputs[1], &inputs[2], act).unwrap();
    let proj = gc::random_tensor(&mut r, out.shape(), 1.0);
    let g = tensor::conv2d_backward(&inputs[0], &inputs[1], &out, &proj, act).unwrap();
    let analytic = [g.input, g.weight, g.bias];
    gc::check("conv2d", &inputs, &analytic, &gc::all_coords(&inputs), |x| {
        let o = tensor::conv2d(&x[0], &x[1], &x[2], act).unwrap();
        Eval { loss: gc::project(&o, &proj), pattern: pattern(act, &o) }
    })
}

pub fn lstm(seed: u64) -> Report {
    let mut r = rng(seed, 3);
    let (t, d, u) = (r.gen_range(1..=5), r.gen_range(1..=4), r.gen_range(1..=4));
    let inputs = vec![
        gc::random_tensor(&mut r, &[t, d], 1.0),
        gc::random_tensor(&mut r, &[d, 4 * u], 0.8),
        gc::random_tensor(&mut r, &[u, 4 * u], 0.8),
        gc::random_tensor(&mut r, &[4 * u], 0.5),
    ];
    let (out, cache) = tensor::lstm(&inputs[0], &inputs[1], &inputs[2], &inputs[3]).unwrap();
    let proj = gc::random_tensor(&mut r, out.shape(), 1.0);
    let g = tensor::lstm_backward(&inputs[0], &inputs[1], &inputs[2], &cache, &proj).unwrap();
    let analytic = [g.input, g.kernel, g.recurrent, g.bias];
    gc::check("lstm", &inputs, &analytic, &gc::all_coords(&inputs), |x| {
        let (o, _) = tensor::lstm(&x[0], &x[1], &x[2], &x[3]).unwrap();
        Eval { loss: gc::project(&o, &proj), pattern: Vec::new() }
    })
}

pub fn dot_attention(seed: u64) -> Report {
    let mut r = rng(seed, 4);
    let (t, u) = (r.gen_range(1..=6), r.gen_range(1..=5));
    let scale = if r.gen_bool(0.5) { 1.0 } else { 1.0 / (u as f64).sqrt() };
    let inputs = vec![gc::random_tensor(&mut r, &[t, u], 1.0)];
    let (out, weights) = tensor::dot_attention(&inputs[0], scale).unwrap();
    let proj = gc::random_tensor(&mut r, out.shape(), 1.0);
    let analytic = [tensor::dot_attention_backward(&inputs[0], &weights, scale, &proj).unwrap()];
    gc::check("dot_attention", &inputs, &analytic, &gc::all_coords(&inputs), |x| {
        let (o, _) = tensor::dot_attention(&x[0], scale).unwrap();
        Eval { loss: gc::project(&o, &proj), pattern: Vec::new() }
    })
}

pub fn spatial_softmax(seed: u64) -> Report {
    let mut r = rng(seed, 5);
    let (h, w) = (r.gen_range(1..=5), r.gen_range(1..=5));
    let inputs = vec![gc::random_tensor(&mut r, &[h, w, 1], 2.0)];
    let out = tensor::spatial_softmax(&inputs[0]).unwrap();
    let proj = gc::random_tensor(&mut r, out.shape(), 1.0);
    let analytic = [tensor::spatial_softmax_backward(&out, &proj).unwrap()];
    gc::check("spatial_softmax", &inputs, &analytic, &gc::all_coords(&inputs), |x| {
        let o = tensor::spatial_softmax(&x[0]).unwrap();
        Eval { loss: gc::project(&o, &proj), pattern: Vec::new() }
    })
}

pub fn broadcast_multiply(seed: u64) -> Report {
    let mut r = rng(seed, 6);
    let (h, w, c) = (r.gen_range(1..=4), r.gen_range(1..=4), r.gen_range(1..=4));
    let inputs = vec![
        gc::random_tensor(&mut r, &[h, w, c], 1.0),
        gc::random_tensor(&mut r, &[h, w, 1], 1.0),
    ];
    let out = tensor::broadcast_multiply(&inputs[0], &inputs[1]).unwrap();
    let proj = gc::random_tensor(&mut r, out.shape(), 1.0);
    let (df, dw) = tensor::broadcast_multiply_backward(&inputs[0], &inputs[1], &proj).unwrap();
    gc::check("broadcast_multiply", &inputs, &[df, dw], &gc::all_coords(&inputs), |x| {
        let o = tensor::broadcast_multiply(&x[0], &x[1]).unwrap();
        Eval { loss: gc::project(&o, &proj), pattern: Vec::new() }
    })
}

pub fn dense(seed: u64) -> Report {
    let mut r = rng(seed, 7);
    let (d, units) = (r.gen_range(1..=12), r.gen_range(1..=3));
    let act = act_for(&mut r);
    let inputs = vec![
        gc::random_tensor(&mut r, &[d], 1.0),
        gc::random_tensor(&mut r, &[d, units], 1.0),
        gc::random_tensor(&mut r, &[units], 0.5),
    ];
    let out = tensor::dense(&inputs[0], &inputs[1], &inputs[2], act).unwrap();
    let proj = gc::random_tensor(&mut r, out.shape(), 1.0);
    let g = tensor::dense_backward(&inputs[0], &inputs[1], &out, &proj, act).unwrap();
    let analytic = [g.input, g.weight, g.bias];
    gc::check("dense", &inputs, &analytic, &gc::all_coords(&inputs), |x| {
        let o = tensor::dense(&x[0], &x[1], &x[2], act).unwrap();
        Eval { loss: gc::project(&o, &proj), pattern: pattern(act, &o) }
    })
}

/// Flatten and standalone ReLU, recorded on a graph.
pub fn flatten_relu(seed: u64) -> Report {
    let mut r = rng(seed, 8);
    let shape = [r.gen_range(1..=4), r.gen_range(1..=4)];
    let inputs = vec![gc::random_tensor(&mut r, &shape, 1.0)];
    let proj = gc::random_tensor(&mut r, &[shape[0] * shape[1]], 1.0);
    let eval = |x: &Tensor| {
        let mut g = Graph::new();
        let i = g.input(x.clone());
        let a = g.relu(i).unwrap();
        let f = g.flatten(a).unwrap();
        (g.value(f).clone(), g.relu_pattern(), g, i, f)
    };
    let (_, _, g, i, f) = eval(&inputs[0]);
    let grads = g.backward(f, &proj).unwrap();
    let analytic = [grads.get(i).unwrap().clone()];
    gc::check("flatten_relu", &inputs, &analytic, &gc::all_coords(&inputs), |x| {
        let (o, p, ..) = eval(&x[0]);
        Eval { loss: gc::project(&o, &proj), pattern: p }
    })
}

pub type Suite = (&'static str, fn(u64) -> Report);

pub const PRIMITIVES: [Suite; 8] = [
    ("conv1d", conv1d),
    ("conv2d", conv2d),
    ("lstm", lstm),
    ("dot_attention", dot_attention),
    ("spatial_softmax", spatial_softmax),
    ("broadcast_multiply", broadcast_multiply),
    ("dense", dense),
    ("flatten_relu", flatten_relu),
];

/// Whole-model check on an `l = 8`, `M = 6` window: every parameter tensor
/// (sampled coordinates) plus the input window.
pub fn composite(arch: Architecture, seed: u64, per_tensor: usize) -> Report {
    let (l, m) = (8, 6);
    let mut model = build(&ModelSpec::new(arch, l, m, seed)).unwrap();
    let mut r = rng(seed, 100);
    // Small non-zero biases so the check also exercises bias paths.
    for (name, t) in model.params.names.iter().zip(model.params.tensors.iter_mut()) {
        if name.ends_with(".bias") {
            for v in t.data_mut() {
                *v += r.gen_range(-0.1..0.1);
            }
        }
    }
    let shape = arch.input_shape(l, m);
    let window = Tensor::from_fn(&shape, |_| r.gen_range(0.0..1.0));
    let n = model.params.tensors.len();

    let mut graph = Graph::new();
    let rec = model.record(&mut graph, window.clone()).unwrap();
    let mut grads = graph.backward(rec.output, &Tensor::scalar(1.0)).unwrap();
    let mut analytic: Vec<Tensor> = rec
        .params
        .iter()
        .zip(&model.params.tensors)
        .map(|(&id, t)| grads.take_or_zeros(id, t.shape()))
        .collect();
    analytic.push(grads.take_or_zeros(rec.input, &shape));
    drop(graph);

    let mut inputs = model.params.tensors.clone();
    inputs.push(window);
    let coords = gc::sample_coords(&mut r, &inputs, per_tensor);
    gc::check(arch.name(), &inputs, &analytic, &coords, |x| {
        model.params.tensors.clone_from_slice(&x[..n]);
        let mut g = Graph::new();
        let rec = model.record(&mut g, x[n].clone()).unwrap();
        Eval { loss: g.value(rec.output).data()[0], pattern: g.relu_pattern() }
    })
}
