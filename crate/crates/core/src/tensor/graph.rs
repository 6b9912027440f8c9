//! Tape of recorded forward operations with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order and may only reference earlier
//! nodes, so the tape is acyclic by construction and its reverse is a valid
//! topological order for backpropagation.

use std::borrow::Cow;

use super::{
    attention, conv, dense, lstm, shape_err, Activation, LstmCache, Result, Tensor, TensorError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv1d { input: NodeId, weight: NodeId, bias: NodeId, act: Activation },
    Conv2d { input: NodeId, weight: NodeId, bias: NodeId, act: Activation },
    Lstm { input: NodeId, kernel: NodeId, recurrent: NodeId, bias: NodeId, cache: LstmCache },
    DotAttention { input: NodeId, scale: f64, weights: Tensor },
    SpatialSoftmax { input: NodeId },
    BroadcastMul { features: NodeId, weights: NodeId },
    Flatten { input: NodeId },
    Dense { input: NodeId, weight: NodeId, bias: NodeId, act: Activation },
    Relu { input: NodeId },
    Scale { input: NodeId, factor: f64 },
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::Conv1d { input, weight, bias, .. }
            | Op::Conv2d { input, weight, bias, .. }
            | Op::Dense { input, weight, bias, .. } => vec![*input, *weight, *bias],
            Op::Lstm { input, kernel, recurrent, bias, .. } => vec![*input, *kernel, *recurrent, *bias],
            Op::DotAttention { input, .. }
            | Op::SpatialSoftmax { input }
            | Op::Flatten { input }
            | Op::Relu { input }
            | Op::Scale { input, .. } => vec![*input],
            Op::BroadcastMul { features, weights } => vec![*features, *weights],
        }
    }

    fn relu_output(&self) -> bool {
        matches!(
            self,
            Op::Relu { .. }
                | Op::Conv1d { act: Activation::Relu, .. }
                | Op::Conv2d { act: Activation::Relu, .. }
                | Op::Dense { act: Activation::Relu, .. }
        )
    }
}

#[derive(Debug)]
struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
}

/// A recorded forward computation. Leaves may borrow their tensors
/// (parameters) for the lifetime `'a`.
#[derive(Debug, Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
}

/// Per-node gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Removes and returns the gradient of `id`, or zeros of `shape` when
    /// the node did not influence the output.
    pub fn take_or_zeros(&mut self, id: NodeId, shape: &[usize]) -> Tensor {
        self.grads
            .get_mut(id.0)
            .and_then(Option::take)
            .unwrap_or_else(|| Tensor::zeros(shape))
    }
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<NodeId> {
        value.check_finite(name)?;
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Owned leaf, typically the model input.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op: Op::Leaf,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Borrowed leaf, typically a parameter tensor.
    pub fn param(&mut self, value: &'a Tensor) -> NodeId {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn conv1d(&mut self, input: NodeId, weight: NodeId, bias: NodeId, act: Activation) -> Result<NodeId> {
        let out = conv::conv1d(self.value(input), self.value(weight), self.value(bias), act)?;
        self.push(out, Op::Conv1d { input, weight, bias, act }, "conv1d")
    }

    pub fn conv2d(&mut self, input: NodeId, weight: NodeId, bias: NodeId, act: Activation) -> Result<NodeId> {
        let out = conv::conv2d(self.value(input), self.value(weight), self.value(bias), act)?;
        self.push(out, Op::Conv2d { input, weight, bias, act }, "conv2d")
    }

    pub fn lstm(&mut self, input: NodeId, kernel: NodeId, recurrent: NodeId, bias: NodeId) -> Result<NodeId> {
        let (out, cache) = lstm::lstm(
            self.value(input),
            self.value(kernel),
            self.value(recurrent),
            self.value(bias),
        )?;
        self.push(out, Op::Lstm { input, kernel, recurrent, bias, cache }, "lstm")
    }

    pub fn dot_attention(&mut self, input: NodeId, scale: f64) -> Result<NodeId> {
        let (out, weights) = attention::dot_attention(self.value(input), scale)?;
        self.push(out, Op::DotAttention { input, scale, weights }, "dot_attention")
    }

    pub fn spatial_softmax(&mut self, input: NodeId) -> Result<NodeId> {
        let out = attention::spatial_softmax(self.value(input))?;
        self.push(out, Op::SpatialSoftmax { input }, "spatial_softmax")
    }

    pub fn broadcast_multiply(&mut self, features: NodeId, weights: NodeId) -> Result<NodeId> {
        let out = dense::broadcast_multiply(self.value(features), self.value(weights))?;
        self.push(out, Op::BroadcastMul { features, weights }, "broadcast_multiply")
    }

    pub fn flatten(&mut self, input: NodeId) -> Result<NodeId> {
        let out = self.value(input).flatten();
        self.push(out, Op::Flatten { input }, "flatten")
    }

    pub fn dense(&mut self, input: NodeId, weight: NodeId, bias: NodeId, act: Activation) -> Result<NodeId> {
        let out = dense::dense(self.value(input), self.value(weight), self.value(bias), act)?;
        self.push(out, Op::Dense { input, weight, bias, act }, "dense")
    }

    pub fn relu(&mut self, input: NodeId) -> Result<NodeId> {
        let out = dense::relu(self.value(input));
        self.push(out, Op::Relu { input }, "relu")
    }

    pub fn scale(&mut self, input: NodeId, factor: f64) -> Result<NodeId> {
        let mut out = self.value(input).clone();
        out.scale(factor);
        self.push(out, Op::Scale { input, factor }, "scale")
    }

    /// Sign pattern of every ReLU output on the tape. Two forward passes
    /// with equal patterns lie on the same linear piece of every ReLU.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter(|n| n.op.relu_output())
            .flat_map(|n| n.value.data().iter().map(|&v| v > 0.0))
            .collect()
    }

    /// Reverse-mode sweep from `output`, seeded with d(loss)/d(output).
    pub fn backward(&self, output: NodeId, seed: &Tensor) -> Result<Gradients> {
        if seed.shape() != self.value(output).shape() {
            return Err(shape_err(
                "backward",
                format!("seed {:?} for output {:?}", seed.shape(), self.value(output).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed.clone());

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            for input in node.op.inputs() {
                if input.0 >= idx {
                    return Err(TensorError::GraphCycle { node: idx, input: input.0 });
                }
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(grad) = grads[idx].take() else { continue };
            if !grad.all_finite() {
                return Err(TensorError::NonFiniteGradient { node: idx });
            }
            let val = |id: NodeId| -> &Tensor { &self.nodes[id.0].value };
            let mut acc = |id: NodeId, g: Tensor| match &mut grads[id.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Conv1d { input, weight, bias, act } => {
                    let g = conv::conv1d_backward(val(*input), val(*weight), &node.value, &grad, *act)?;
                    acc(*input, g.input);
                    acc(*weight, g.weight);
                    acc(*bias, g.bias);
                }
                Op::Conv2d { input, weight, bias, act } => {
                    let g = conv::conv2d_backward(val(*input), val(*weight), &node.value, &grad, *act)?;
                    acc(*input, g.input);
                    acc(*weight, g.weight);
                    acc(*bias, g.bias);
                }
                Op::Lstm { input, kernel, recurrent, bias, cache } => {
                    let g = lstm::lstm_backward(val(*input), val(*kernel), val(*recurrent), cache, &grad)?;
                    acc(*input, g.input);
                    acc(*kernel, g.kernel);
                    acc(*recurrent, g.recurrent);
                    acc(*bias, g.bias);
                }
                Op::DotAttention { input, scale, weights } => {
                    let g = attention::dot_attention_backward(val(*input), weights, *scale, &grad)?;
                    acc(*input, g);
                }
                Op::SpatialSoftmax { input } => {
                    acc(*input, attention::spatial_softmax_backward(&node.value, &grad)?);
                }
                Op::BroadcastMul { features, weights } => {
                    let (df, dw) = dense::broadcast_multiply_backward(val(*features), val(*weights), &grad)?;
                    acc(*features, df);
                    acc(*weights, dw);
                }
                Op::Flatten { input } => {
                    acc(*input, grad.reshape(val(*input).shape())?);
                }
                Op::Dense { input, weight, bias, act } => {
                    let g = dense::dense_backward(val(*input), val(*weight), &node.value, &grad, *act)?;
                    acc(*input, g.input);
                    acc(*weight, g.weight);
                    acc(*bias, g.bias);
                }
                Op::Relu { input } => {
                    acc(*input, dense::relu_backward(&node.value, &grad));
                }
                Op::Scale { input, factor } => {
                    let mut g = grad;
                    g.scale(*factor);
                    acc(*input, g);
                }
            }
        }
        for (idx, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if !g.all_finite() {
                    return Err(TensorError::NonFiniteGradient { node: idx });
                }
            }
        }
        Ok(Gradients { grads })
    }
}
