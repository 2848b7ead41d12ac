//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Tape`] is an append-only list of nodes. Every node records the
//! operation that produced it, the ids of its inputs (which always precede
//! it) and whatever activations the backward rule needs. Because inputs
//! precede consumers, a reverse sweep over the node list is a valid
//! topological order for backpropagation, and a forward sweep replays the
//! graph.
//!
//! Only the primitives the conditional-attention network needs are
//! provided. Broadcasting is limited to scalars and the explicit
//! [`Tape::add_row`] bias op.

mod gradcheck;
mod ops;

pub use gradcheck::{grad_check, grad_check_many, relative_error};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    MatMul,
    Transpose,
    Add,
    Sub,
    Mul,
    AddRow,
    Scale,
    Relu,
    Gelu,
    Softmax,
    LayerNorm,
    ConcatLast,
    ConcatRows,
    SliceRows,
    SelectCol,
    Reshape,
    Sum,
    Mean,
    Huber,
}

#[derive(Clone, Debug)]
pub(crate) enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Gelu(Var),
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, gain: Var, bias: Var, eps: T },
    ConcatLast(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows { x: Var, start: usize, len: usize },
    SelectCol { x: Var, col: usize },
    Reshape(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    Huber { x: Var, kappa: T },
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Transpose(_) => OpKind::Transpose,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::AddRow(..) => OpKind::AddRow,
            Op::Scale(..) => OpKind::Scale,
            Op::Relu(_) => OpKind::Relu,
            Op::Gelu(_) => OpKind::Gelu,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::ConcatLast(_) => OpKind::ConcatLast,
            Op::ConcatRows(_) => OpKind::ConcatRows,
            Op::SliceRows { .. } => OpKind::SliceRows,
            Op::SelectCol { .. } => OpKind::SelectCol,
            Op::Reshape(..) => OpKind::Reshape,
            Op::Sum(_) => OpKind::Sum,
            Op::Mean(_) => OpKind::Mean,
            Op::Huber { .. } => OpKind::Huber,
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) => {
                vec![*a, *b]
            }
            Op::Transpose(x)
            | Op::Scale(x, _)
            | Op::Relu(x)
            | Op::Gelu(x)
            | Op::Reshape(x, _)
            | Op::Sum(x)
            | Op::Mean(x) => vec![*x],
            Op::Softmax { x, .. }
            | Op::SliceRows { x, .. }
            | Op::SelectCol { x, .. }
            | Op::Huber { x, .. } => vec![*x],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::ConcatLast(xs) | Op::ConcatRows(xs) => xs.clone(),
        }
    }
}

pub(crate) struct Node<T> {
    pub(crate) op: Op<T>,
    pub(crate) value: Tensor<T>,
    /// Activations kept for the backward rule (e.g. normalized inputs).
    pub(crate) saved: Vec<T>,
    pub(crate) requires_grad: bool,
    pub(crate) grad: Option<Vec<T>>,
}

/// Recorded computation graph.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// (op, inputs) per node, in recording order.
    pub fn structure(&self) -> Vec<(OpKind, Vec<Var>)> {
        self.nodes.iter().map(|n| (n.op.kind(), n.op.inputs())).collect()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            saved: Vec::new(),
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, zeros if backward never reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let node = &self.nodes[v.0];
        if !node.requires_grad || !matches!(node.op, Op::Leaf) {
            return None;
        }
        Some(match &node.grad {
            Some(g) => Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"),
            None => Tensor::zeros(node.value.shape().to_vec()),
        })
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Overwrites a leaf value; call [`Tape::replay`] to refresh dependents.
    pub fn set_value(&mut self, v: Var, value: Tensor<T>) -> Result<()> {
        let node = &mut self.nodes[v.0];
        if !matches!(node.op, Op::Leaf) {
            return Err(Error::Contract(format!("node {} is not a leaf", v.0)));
        }
        if node.value.shape() != value.shape() {
            return Err(Error::Dimension {
                op: "set_value",
                lhs: node.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        node.value = value;
        Ok(())
    }

    /// Recomputes every non-leaf node from the current leaf values.
    pub fn replay(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let (value, saved) = self.compute(&self.nodes[i].op)?;
            let node = &mut self.nodes[i];
            node.value = value;
            node.saved = saved;
        }
        Ok(())
    }

    fn push(&mut self, op: Op<T>) -> Result<Var> {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        let (value, saved) = self.compute(&op)?;
        self.nodes.push(Node {
            op,
            value,
            saved,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse sweep from a scalar loss. Leaf gradients accumulate across calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut adj: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(upstream) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(g) => g.iter_mut().zip(&upstream).for_each(|(a, &b)| *a += b),
                    None => node.grad = Some(upstream),
                }
                continue;
            }
            for (input, contribution) in self.local_grads(i, &upstream) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut adj[input.0] {
                    Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(contribution),
                }
            }
        }
        // Unreached leaves that require grad report zeros.
        for node in &mut self.nodes {
            if node.requires_grad && matches!(node.op, Op::Leaf) && node.grad.is_none() {
                node.grad = Some(vec![T::zero(); node.value.len()]);
            }
        }
        Ok(())
    }
}
