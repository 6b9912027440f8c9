//! ForeNet-2d, ForeNet-3d and their ablation variants, assembled from the
//! primitives in [`crate::tensor`].
//!
//! A [`Model`] is a small DAG of [`Layer`]s. Layer `i` reads from earlier
//! layer outputs (or the model input), which is enough to express the
//! ForeNet-3d bypass where the second convolution feeds both the attention
//! map and the multiply chain.

mod checkpoint;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{glorot_uniform, uniform, Activation, Graph, NodeId, Tensor, TensorError};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("unsupported input shape {shape:?} for {arch}: {reason}")]
    UnsupportedShape {
        arch: Architecture,
        shape: Vec<usize>,
        reason: String,
    },
    #[error("window shape {got:?} does not match model input {expected:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("non-finite activation: {0}")]
    NonFiniteActivation(TensorError),
    #[error(transparent)]
    Tensor(TensorError),
    #[error("checkpoint does not start with the FNET magic")]
    BadMagic,
    #[error("checkpoint format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint checksum mismatch (truncated or corrupted file)")]
    ChecksumMismatch,
    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
}

impl From<TensorError> for ModelError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::NonFinite { .. } => ModelError::NonFiniteActivation(e),
            other => ModelError::Tensor(other),
        }
    }
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Architecture {
    ForeNet2d,
    ForeNet3d,
    Cnn,
    Lstm,
    CnnLstm,
    CnnAm,
    LstmAm,
    CnnM,
}

impl Architecture {
    pub const ALL: [Architecture; 8] = [
        Architecture::ForeNet2d,
        Architecture::ForeNet3d,
        Architecture::Cnn,
        Architecture::Lstm,
        Architecture::CnnLstm,
        Architecture::CnnAm,
        Architecture::LstmAm,
        Architecture::CnnM,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::ForeNet2d => "forenet2d",
            Architecture::ForeNet3d => "forenet3d",
            Architecture::Cnn => "cnn",
            Architecture::Lstm => "lstm",
            Architecture::CnnLstm => "cnn-lstm",
            Architecture::CnnAm => "cnn-am",
            Architecture::LstmAm => "lstm-am",
            Architecture::CnnM => "cnn-m",
        }
    }

    /// True for architectures that take `l × M × 1` windows.
    pub fn is_3d(self) -> bool {
        matches!(self, Architecture::ForeNet3d | Architecture::CnnM)
    }

    /// Input shape for a window of `l` logs over `m` parameters.
    pub fn input_shape(self, l: usize, m: usize) -> Vec<usize> {
        if self.is_3d() {
            vec![l, m, 1]
        } else {
            vec![l, m]
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let norm: String = s.to_ascii_lowercase().chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        Architecture::ALL
            .into_iter()
            .find(|a| a.name().replace('-', "") == norm)
            .ok_or_else(|| format!("unknown model '{s}'"))
    }
}

/// Declarative description of a model to build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub input_shape: Vec<usize>,
    pub seed: u64,
    /// Scale dot-attention scores by `1/sqrt(U)`. Off by default.
    #[serde(default)]
    pub attention_scaled: bool,
    /// Multiply the ForeNet-3d attention map by its cell count. On by
    /// default.
    #[serde(default = "enabled")]
    pub spatial_rescale: bool,
}

fn enabled() -> bool {
    true
}

impl ModelSpec {
    pub fn new(architecture: Architecture, l: usize, m: usize, seed: u64) -> Self {
        Self {
            architecture,
            input_shape: architecture.input_shape(l, m),
            seed,
            attention_scaled: false,
            spatial_rescale: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Conv1d { filters: usize, kernel: usize, act: Activation },
    Conv2d { filters: usize, kernel: usize, act: Activation },
    Lstm { units: usize },
    /// Parameter-free dot-product self-attention over time steps.
    Attention { scale: f64 },
    /// Softmax over every cell of a single-channel map, multiplied by
    /// `rescale`.
    SpatialSoftmax { rescale: f64 },
    /// `inputs[0] ⊙ inputs[1]`, the second broadcast across channels.
    Multiply,
    Flatten,
    Dense { units: usize, act: Activation },
}

/// Where a layer reads from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Input,
    Layer(usize),
}

#[derive(Debug, Clone)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
    pub inputs: Vec<Source>,
    pub output_shape: Vec<usize>,
    /// Indices into [`LayerParams`].
    pub params: Vec<usize>,
}

impl Layer {
    pub fn param_count(&self, params: &LayerParams) -> usize {
        self.params.iter().map(|&i| params.tensors[i].len()).sum()
    }

    /// Short type label in the style of a Keras model summary.
    pub fn type_name(&self) -> &'static str {
        match self.kind {
            LayerKind::Conv1d { .. } => "Conv1D",
            LayerKind::Conv2d { .. } => "Conv2D",
            LayerKind::Lstm { .. } => "LSTM",
            LayerKind::Attention { .. } | LayerKind::SpatialSoftmax { .. } => "Attention",
            LayerKind::Multiply => "Multiply",
            LayerKind::Flatten => "Flatten",
            LayerKind::Dense { .. } => "Dense",
        }
    }
}

/// Every trainable tensor of a model, in a stable order.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl LayerParams {
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub layers: Vec<Layer>,
    pub params: LayerParams,
}

/// Node handles of one recorded forward pass.
#[derive(Debug, Clone)]
pub struct Recorded {
    pub output: NodeId,
    pub input: NodeId,
    /// Leaf of every parameter tensor, in parameter order.
    pub params: Vec<NodeId>,
}

struct Builder {
    arch: Architecture,
    input_shape: Vec<usize>,
    rng: ChaCha8Rng,
    layers: Vec<Layer>,
    params: LayerParams,
}

impl Builder {
    fn shape_of(&self, src: Source) -> &[usize] {
        match src {
            Source::Input => &self.input_shape,
            Source::Layer(i) => &self.layers[i].output_shape,
        }
    }

    fn last(&self) -> Source {
        if self.layers.is_empty() {
            Source::Input
        } else {
            Source::Layer(self.layers.len() - 1)
        }
    }

    fn unsupported(&self, reason: String) -> ModelError {
        ModelError::UnsupportedShape {
            arch: self.arch,
            shape: self.input_shape.clone(),
            reason,
        }
    }

    fn add_param(&mut self, name: String, tensor: Tensor) -> usize {
        self.params.names.push(name);
        self.params.tensors.push(tensor);
        self.params.tensors.len() - 1
    }

    fn push(&mut self, name: &str, kind: LayerKind, inputs: Vec<Source>) -> Result<Source> {
        let in_shape = self.shape_of(inputs[0]).to_vec();
        let mut params = Vec::new();
        let output_shape = match &kind {
            LayerKind::Conv1d { filters, kernel, .. } => {
                let [len, c_in] = in_shape[..] else {
                    return Err(self.unsupported(format!("{name} needs a 2-D input, got {in_shape:?}")));
                };
                if len < *kernel {
                    return Err(self.unsupported(format!("{name}: length {len} below kernel {kernel}")));
                }
                let w = glorot_uniform(&mut self.rng, &[*kernel, c_in, *filters], kernel * c_in, kernel * filters);
                params.push(self.add_param(format!("{name}.kernel"), w));
                params.push(self.add_param(format!("{name}.bias"), Tensor::zeros(&[*filters])));
                vec![len - kernel + 1, *filters]
            }
            LayerKind::Conv2d { filters, kernel, .. } => {
                let [h, w, c_in] = in_shape[..] else {
                    return Err(self.unsupported(format!("{name} needs a 3-D input, got {in_shape:?}")));
                };
                if h < *kernel || w < *kernel {
                    return Err(self.unsupported(format!("{name}: {h}×{w} below kernel {kernel}")));
                }
                let rf = kernel * kernel;
                let wt = glorot_uniform(&mut self.rng, &[*kernel, *kernel, c_in, *filters], rf * c_in, rf * filters);
                params.push(self.add_param(format!("{name}.kernel"), wt));
                params.push(self.add_param(format!("{name}.bias"), Tensor::zeros(&[*filters])));
                vec![h - kernel + 1, w - kernel + 1, *filters]
            }
            LayerKind::Lstm { units } => {
                let [steps, d] = in_shape[..] else {
                    return Err(self.unsupported(format!("{name} needs a 2-D input, got {in_shape:?}")));
                };
                let u = *units;
                let kernel = glorot_uniform(&mut self.rng, &[d, 4 * u], d, 4 * u);
                let recurrent = uniform(&mut self.rng, &[u, 4 * u], (6.0 / (5 * u) as f64).sqrt());
                let mut bias = Tensor::zeros(&[4 * u]);
                bias.data_mut()[u..2 * u].fill(1.0);
                params.push(self.add_param(format!("{name}.kernel"), kernel));
                params.push(self.add_param(format!("{name}.recurrent_kernel"), recurrent));
                params.push(self.add_param(format!("{name}.bias"), bias));
                vec![steps, u]
            }
            LayerKind::Attention { .. } => {
                if in_shape.len() != 2 {
                    return Err(self.unsupported(format!("{name} needs a 2-D input, got {in_shape:?}")));
                }
                in_shape.clone()
            }
            LayerKind::SpatialSoftmax { .. } => {
                if in_shape.len() != 3 || in_shape[2] != 1 {
                    return Err(self.unsupported(format!("{name} needs an H×W×1 map, got {in_shape:?}")));
                }
                in_shape.clone()
            }
            LayerKind::Multiply => {
                let w_shape = self.shape_of(inputs[1]);
                if in_shape.len() != 3 || w_shape.len() != 3 || in_shape[..2] != w_shape[..2] {
                    return Err(self.unsupported(format!("{name}: {in_shape:?} ⊙ {w_shape:?}")));
                }
                in_shape.clone()
            }
            LayerKind::Flatten => vec![in_shape.iter().product()],
            LayerKind::Dense { units, .. } => {
                let [d] = in_shape[..] else {
                    return Err(self.unsupported(format!("{name} needs a flat input, got {in_shape:?}")));
                };
                let w = glorot_uniform(&mut self.rng, &[d, *units], d, *units);
                params.push(self.add_param(format!("{name}.kernel"), w));
                params.push(self.add_param(format!("{name}.bias"), Tensor::zeros(&[*units])));
                vec![*units]
            }
        };
        self.layers.push(Layer {
            name: name.to_string(),
            kind,
            inputs,
            output_shape,
            params,
        });
        Ok(self.last())
    }

    fn seq(&mut self, name: &str, kind: LayerKind) -> Result<Source> {
        let src = self.last();
        self.push(name, kind, vec![src])
    }
}

fn conv1d(filters: usize) -> LayerKind {
    LayerKind::Conv1d {
        filters,
        kernel: 3,
        act: Activation::Relu,
    }
}

const DENSE_OUT: LayerKind = LayerKind::Dense {
    units: 1,
    act: Activation::Linear,
};

/// Builds and deterministically initializes the model described by `spec`.
pub fn build(spec: &ModelSpec) -> Result<Model> {
    use Architecture::*;
    let arch = spec.architecture;
    let shape = &spec.input_shape;
    let expected_rank = if arch.is_3d() { 3 } else { 2 };
    if shape.len() != expected_rank || shape.contains(&0) || (arch.is_3d() && shape[2] != 1) {
        return Err(ModelError::UnsupportedShape {
            arch,
            shape: shape.clone(),
            reason: format!("expected {}", if arch.is_3d() { "(l, M, 1)" } else { "(l, M)" }),
        });
    }
    let needs_conv_stack = matches!(arch, ForeNet2d | Cnn | CnnLstm | CnnAm);
    if needs_conv_stack && shape[0] < 7 {
        return Err(ModelError::UnsupportedShape {
            arch,
            shape: shape.clone(),
            reason: "three kernel-3 convolutions need l >= 7".into(),
        });
    }
    if arch.is_3d() && (shape[0] < 5 || shape[1] < 5) {
        return Err(ModelError::UnsupportedShape {
            arch,
            shape: shape.clone(),
            reason: "two 3×3 convolutions need l >= 5 and M >= 5".into(),
        });
    }

    let units = 64;
    let attention = LayerKind::Attention {
        scale: if spec.attention_scaled {
            1.0 / (units as f64).sqrt()
        } else {
            1.0
        },
    };
    let mut b = Builder {
        arch,
        input_shape: shape.clone(),
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        layers: Vec::new(),
        params: LayerParams {
            names: Vec::new(),
            tensors: Vec::new(),
        },
    };

    let conv_stack = |b: &mut Builder| -> Result<()> {
        b.seq("conv1d_1", conv1d(64))?;
        b.seq("conv1d_2", conv1d(64))?;
        b.seq("conv1d_3", conv1d(128))?;
        Ok(())
    };

    match arch {
        ForeNet2d | CnnLstm | CnnAm | Cnn | Lstm | LstmAm => {
            if matches!(arch, ForeNet2d | CnnLstm | CnnAm | Cnn) {
                conv_stack(&mut b)?;
            }
            if matches!(arch, ForeNet2d | CnnLstm | Lstm | LstmAm) {
                b.seq("lstm", LayerKind::Lstm { units })?;
            }
            if matches!(arch, ForeNet2d | CnnAm | LstmAm) {
                b.seq("attention", attention)?;
            }
        }
        ForeNet3d | CnnM => {
            b.seq(
                "conv2d_1",
                LayerKind::Conv2d {
                    filters: 64,
                    kernel: 3,
                    act: Activation::Relu,
                },
            )?;
            let features = b.seq(
                "conv2d_2",
                LayerKind::Conv2d {
                    filters: 32,
                    kernel: 3,
                    act: Activation::Relu,
                },
            )?;
            let mut map = b.seq(
                "conv2d_3",
                LayerKind::Conv2d {
                    filters: 1,
                    kernel: 1,
                    act: Activation::Linear,
                },
            )?;
            if arch == ForeNet3d {
                // Rescaling by the cell count gives the map mean 1 instead of
                // 1/(H·W), so the cubed product does not vanish.
                let cells = b.shape_of(map)[..2].iter().product::<usize>();
                let rescale = if spec.spatial_rescale { cells as f64 } else { 1.0 };
                map = b.seq("attention", LayerKind::SpatialSoftmax { rescale })?;
            }
            let mut product = features;
            for i in 1..=3 {
                product = b.push(&format!("multiply_{i}"), LayerKind::Multiply, vec![product, map])?;
            }
        }
    }
    b.seq("flatten", LayerKind::Flatten)?;
    b.seq("dense", DENSE_OUT)?;

    Ok(Model {
        spec: spec.clone(),
        layers: b.layers,
        params: b.params,
    })
}

/// Total number of trainable scalars.
pub fn param_count(model: &Model) -> usize {
    model.params.count()
}

impl Model {
    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Output shape of every layer, in forward order.
    pub fn shape_trace(&self) -> Vec<Vec<usize>> {
        self.layers.iter().map(|l| l.output_shape.clone()).collect()
    }

    /// Parameter count of every layer, in forward order.
    pub fn layer_param_counts(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.param_count(&self.params)).collect()
    }

    /// Records the forward pass of `window` on `graph`.
    pub fn record<'a>(&'a self, graph: &mut Graph<'a>, window: Tensor) -> Result<Recorded> {
        if window.shape() != self.spec.input_shape.as_slice() {
            return Err(ModelError::ShapeMismatch {
                expected: self.spec.input_shape.clone(),
                got: window.shape().to_vec(),
            });
        }
        let param_nodes: Vec<NodeId> = self.params.tensors.iter().map(|t| graph.param(t)).collect();
        let input = graph.input(window);
        let mut outputs: Vec<NodeId> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let src = |s: Source| match s {
                Source::Input => input,
                Source::Layer(i) => outputs[i],
            };
            let x = src(layer.inputs[0]);
            let p = |k: usize| param_nodes[layer.params[k]];
            let node = match &layer.kind {
                LayerKind::Conv1d { act, .. } => graph.conv1d(x, p(0), p(1), *act)?,
                LayerKind::Conv2d { act, .. } => graph.conv2d(x, p(0), p(1), *act)?,
                LayerKind::Lstm { .. } => graph.lstm(x, p(0), p(1), p(2))?,
                LayerKind::Attention { scale } => graph.dot_attention(x, *scale)?,
                LayerKind::SpatialSoftmax { rescale } => {
                    let soft = graph.spatial_softmax(x)?;
                    if *rescale == 1.0 {
                        soft
                    } else {
                        graph.scale(soft, *rescale)?
                    }
                }
                LayerKind::Multiply => graph.broadcast_multiply(x, src(layer.inputs[1]))?,
                LayerKind::Flatten => graph.flatten(x)?,
                LayerKind::Dense { act, .. } => graph.dense(x, p(0), p(1), *act)?,
            };
            outputs.push(node);
        }
        Ok(Recorded {
            output: *outputs.last().expect("model has layers"),
            input,
            params: param_nodes,
        })
    }

    /// Single prediction on the scaled degradation axis.
    pub fn forward(&self, window: &Tensor) -> Result<f64> {
        let mut graph = Graph::new();
        let rec = self.record(&mut graph, window.clone())?;
        Ok(graph.value(rec.output).data()[0])
    }

    /// Forward pass plus parameter gradients. `seed` maps the prediction to
    /// d(loss)/d(prediction).
    pub fn forward_backward(&self, window: &Tensor, seed: impl FnOnce(f64) -> f64) -> Result<(f64, Vec<Tensor>)> {
        let mut graph = Graph::new();
        let rec = self.record(&mut graph, window.clone())?;
        let pred = graph.value(rec.output).data()[0];
        let mut grads = graph.backward(rec.output, &Tensor::scalar(seed(pred)))?;
        let params = rec
            .params
            .iter()
            .zip(&self.params.tensors)
            .map(|(&id, t)| grads.take_or_zeros(id, t.shape()))
            .collect();
        Ok((pred, params))
    }
}
