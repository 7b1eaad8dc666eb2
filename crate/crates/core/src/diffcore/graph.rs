//! Reverse-mode differentiation tape.
//!
//! A [`Graph`] records every primitive in execution order. Because inputs
//! always precede outputs on the tape, walking it backwards is a reverse
//! topological order and each node's vector-Jacobian product runs once.

use std::fmt;

use crate::diffcore::ops;
use crate::diffcore::tensor::Tensor;
use crate::error::{Error, Result};
use crate::par::Schedule;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryKind {
    Gelu,
    Sigmoid,
    Exp,
    Abs,
    Sqrt,
}

/// A fused operation defined outside diffcore.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;
    fn inputs(&self) -> Vec<Var>;
    /// Accumulates input gradients given the output gradient `grad`.
    fn backward(&self, grad: &[f64], sink: &mut GradSink<'_>);
}

pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    BiasAdd(Var, Var),
    MatMul(ops::linalg::MatMulMeta),
    Conv2d(ops::conv::ConvMeta),
    LayerNorm(ops::norm::LayerNormMeta),
    Unary(Var, UnaryKind),
    Clamp { x: Var, lo: f64, hi: f64 },
    BilinearSample(ops::sample::BilinearMeta),
    MaxPool2d { x: Var, argmax: Vec<usize> },
    GlobalAvgPool(Var),
    SumAxis(ops::reduce::SumAxisMeta),
    Sum(Var),
    Mean(Var),
    Gather { x: Var, index: Vec<usize> },
    Concat { inputs: Vec<Var>, sizes: Vec<usize> },
    Custom(Box<dyn CustomOp>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::BiasAdd(..) => "bias_add",
            Op::MatMul(..) => "matmul",
            Op::Conv2d(..) => "conv2d",
            Op::LayerNorm(..) => "layernorm",
            Op::Unary(_, k) => match k {
                UnaryKind::Gelu => "gelu",
                UnaryKind::Sigmoid => "sigmoid",
                UnaryKind::Exp => "exp",
                UnaryKind::Abs => "abs",
                UnaryKind::Sqrt => "sqrt",
            },
            Op::Clamp { .. } => "clamp",
            Op::BilinearSample(..) => "bilinear_sample",
            Op::MaxPool2d { .. } => "maxpool2d",
            Op::GlobalAvgPool(..) => "global_avgpool",
            Op::SumAxis(..) => "sum_axis",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Gather { .. } => "gather",
            Op::Concat { .. } => "concat",
            Op::Custom(c) => c.name(),
        }
    }
}

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// Operation recorder and owner of all intermediate values.
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
    macs: u64,
    schedule: Schedule,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph")
            .field("nodes", &self.nodes.len())
            .field("macs", &self.macs)
            .field("schedule", &self.schedule)
            .finish()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::with_schedule(Schedule::default())
    }

    pub fn with_schedule(schedule: Schedule) -> Self {
        Graph {
            nodes: Vec::new(),
            macs: 0,
            schedule,
        }
    }

    pub fn schedule(&self) -> Schedule {
        self.schedule
    }

    /// Multiply-accumulate count of everything recorded so far.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    pub fn add_macs(&mut self, n: u64) {
        self.macs += n;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that receives gradients.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push_raw(t, Op::Leaf, true)
    }

    /// A leaf that does not receive gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_raw(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a computed node, rejecting non-finite results.
    pub(crate) fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_raw(value, op, requires_grad))
    }

    /// Records the output of a [`CustomOp`].
    pub fn push_custom(&mut self, value: Tensor, op: Box<dyn CustomOp>) -> Result<Var> {
        let inputs = op.inputs();
        self.push(value, Op::Custom(op), &inputs)
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::shape(
                "backward",
                "scalar loss",
                format!("{:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            {
                let mut sink = GradSink {
                    nodes: &self.nodes,
                    grads: &mut grads,
                };
                backward_node(&node.op, &node.value, &g, &mut sink);
            }
            grads[i] = Some(g);
        }
        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients { grads, shapes })
    }
}

/// Write access to gradient accumulators during a backward pass.
pub struct GradSink<'a> {
    nodes: &'a [Node],
    grads: &'a mut [Option<Vec<f64>>],
}

impl GradSink<'_> {
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Runs `f` on the accumulator of `v` if `v` takes gradients.
    pub fn accumulate(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].value.len();
        let acc = self.grads[v.0].get_or_insert_with(|| vec![0.0; n]);
        f(acc);
    }

    pub fn add_slice(&mut self, v: Var, g: &[f64]) {
        self.accumulate(v, |acc| {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        });
    }
}

fn backward_node(op: &Op, out: &Tensor, g: &[f64], sink: &mut GradSink<'_>) {
    match op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            sink.add_slice(*a, g);
            sink.add_slice(*b, g);
        }
        Op::Sub(a, b) => {
            sink.add_slice(*a, g);
            sink.accumulate(*b, |acc| acc.iter_mut().zip(g).for_each(|(a, g)| *a -= g));
        }
        Op::Mul(a, b) => ops::elementwise::mul_backward(*a, *b, g, sink),
        Op::Scale(x, k) => sink.accumulate(*x, |acc| {
            acc.iter_mut().zip(g).for_each(|(a, g)| *a += k * g)
        }),
        Op::AddScalar(x) => sink.add_slice(*x, g),
        Op::BiasAdd(x, b) => ops::elementwise::bias_add_backward(*x, *b, g, sink),
        Op::MatMul(m) => ops::linalg::matmul_backward(m, g, sink),
        Op::Conv2d(m) => ops::conv::conv2d_backward(m, g, sink),
        Op::LayerNorm(m) => ops::norm::layernorm_backward(m, g, sink),
        Op::Unary(x, kind) => ops::elementwise::unary_backward(*x, *kind, out, g, sink),
        Op::Clamp { x, lo, hi } => ops::elementwise::clamp_backward(*x, *lo, *hi, g, sink),
        Op::BilinearSample(m) => ops::sample::bilinear_backward(m, g, sink),
        Op::MaxPool2d { x, argmax } => sink.accumulate(*x, |acc| {
            for (&src, gv) in argmax.iter().zip(g) {
                acc[src] += gv;
            }
        }),
        Op::GlobalAvgPool(x) => ops::reduce::global_avgpool_backward(*x, g, sink),
        Op::SumAxis(m) => ops::reduce::sum_axis_backward(m, g, sink),
        Op::Sum(x) => sink.accumulate(*x, |acc| acc.iter_mut().for_each(|a| *a += g[0])),
        Op::Mean(x) => {
            let n = sink.value(*x).len() as f64;
            sink.accumulate(*x, |acc| acc.iter_mut().for_each(|a| *a += g[0] / n));
        }
        Op::Gather { x, index } => sink.accumulate(*x, |acc| {
            for (&src, gv) in index.iter().zip(g) {
                acc[src] += gv;
            }
        }),
        Op::Concat { inputs, sizes } => {
            let mut offset = 0;
            for (v, &n) in inputs.iter().zip(sizes) {
                sink.add_slice(*v, &g[offset..offset + n]);
                offset += n;
            }
        }
        Op::Custom(c) => c.backward(g, sink),
    }
}

/// Gradients of every node with respect to the loss.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of `v`; zeros when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => Tensor::new(self.shapes[v.0].clone(), g.clone()).expect("gradient shape"),
            None => Tensor::zeros(self.shapes[v.0].clone()),
        }
    }

    pub fn is_touched(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}
