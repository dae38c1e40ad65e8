//! Tape-based reverse-mode automatic differentiation over matrices.
//!
//! Every operation appends a node holding its forward value. Node ids are
//! handed out in increasing order and an operation may only read existing
//! nodes, so the tape is a DAG in topological order by construction.
//! [`backward`] performs one reverse sweep from a scalar loss node.

use super::matrix::{matmul_nt_acc, matmul_tn_acc, softmax_unchecked, Matrix};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// Matrix plus a `1 × cols` row broadcast over every row.
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    /// Elementwise product with a constant matrix (dropout multipliers).
    MulConst(NodeId, Matrix),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Log(NodeId),
    /// Softmax applied independently to every row.
    SoftmaxRows(NodeId),
    ConcatCols(NodeId, NodeId),
    /// Vertical stack of equally wide row blocks.
    StackRows(Vec<NodeId>),
    Row(NodeId, usize),
    Transpose(NodeId),
    Sum(NodeId),
    /// `-ln softmax(logits)[target]` for a `1 × E` logit row.
    SoftmaxCrossEntropy {
        logits: NodeId,
        target: usize,
    },
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | AddRow(a, b) | ConcatCols(a, b) => vec![*a, *b],
            Scale(a, _)
            | MulConst(a, _)
            | Tanh(a)
            | Sigmoid(a)
            | Exp(a)
            | Log(a)
            | SoftmaxRows(a)
            | Row(a, _)
            | Transpose(a)
            | Sum(a) => vec![*a],
            SoftmaxCrossEntropy { logits, .. } => vec![*logits],
            StackRows(parts) => parts.clone(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TapeNode {
    pub op: Op,
    pub value: Matrix,
    /// Cached softmax probabilities for the fused cross-entropy node.
    aux: Option<Vec<f64>>,
}

impl TapeNode {
    pub fn inputs(&self) -> Vec<NodeId> {
        self.op.inputs()
    }
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<TapeNode>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &TapeNode {
        &self.nodes[id.0]
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Matrix) -> NodeId {
        self.push_with_aux(op, value, None)
    }

    fn push_with_aux(&mut self, op: Op, value: Matrix, aux: Option<Vec<f64>>) -> NodeId {
        debug_assert!(value.is_finite(), "non-finite value from {op:?}");
        self.nodes.push(TapeNode { op, value, aux });
        NodeId(self.nodes.len() - 1)
    }

    /// Inserts a node verbatim. Only used to exercise the ordering check.
    #[cfg(test)]
    fn push_raw(&mut self, op: Op, value: Matrix) -> NodeId {
        self.push(op, value)
    }

    pub fn leaf(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(Op::Mul(a, b), v))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let v = self.value(a).add_row(self.value(row))?;
        Ok(self.push(Op::AddRow(a, row), v))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = self.value(a).scale(k);
        self.push(Op::Scale(a, k), v)
    }

    pub fn mul_const(&mut self, a: NodeId, c: Matrix) -> Result<NodeId> {
        let v = self.value(a).hadamard(&c)?;
        Ok(self.push(Op::MulConst(a, c), v))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), v)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), v)
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        if self.value(a).data().iter().any(|&x| x <= 0.0) {
            return Err(Error::invalid("log of a non-positive value"));
        }
        let v = self.value(a).map(f64::ln);
        Ok(self.push(Op::Log(a), v))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let v = softmax_rows(self.value(a));
        self.push(Op::SoftmaxRows(a), v)
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).concat_cols(self.value(b))?;
        Ok(self.push(Op::ConcatCols(a, b), v))
    }

    pub fn stack_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let v = stack_rows(parts.iter().map(|p| self.value(*p)))?;
        Ok(self.push(Op::StackRows(parts.to_vec()), v))
    }

    pub fn row(&mut self, a: NodeId, r: usize) -> Result<NodeId> {
        let m = self.value(a);
        if r >= m.rows() {
            return Err(Error::invalid(format!(
                "row {r} out of range for shape {:?}",
                m.shape()
            )));
        }
        let v = Matrix::row_vector(m.row(r));
        Ok(self.push(Op::Row(a, r), v))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        self.push(Op::Transpose(a), v)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Matrix::filled(1, 1, self.value(a).sum());
        self.push(Op::Sum(a), v)
    }

    pub fn softmax_cross_entropy(&mut self, logits: NodeId, target: usize) -> Result<NodeId> {
        let l = self.value(logits);
        if l.rows() != 1 {
            return Err(Error::ShapeMismatch {
                op: "softmax_cross_entropy",
                left: l.shape(),
                right: (1, l.cols()),
            });
        }
        if target >= l.cols() {
            return Err(Error::TokenOutOfRange {
                token: target,
                size: l.cols(),
            });
        }
        let probs = softmax_unchecked(l.data());
        let loss = -log_prob_at(l.data(), target);
        Ok(self.push_with_aux(
            Op::SoftmaxCrossEntropy { logits, target },
            Matrix::filled(1, 1, loss),
            Some(probs),
        ))
    }

    /// Softmax probabilities cached by a cross-entropy node.
    pub fn cached_probs(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].aux.as_deref()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln softmax(logits)[target]`, computed without forming the probabilities.
pub(crate) fn log_prob_at(logits: &[f64], target: usize) -> f64 {
    logits[target] - super::matrix::log_sum_exp(logits)
}

pub(crate) fn stack_rows<'a>(parts: impl Iterator<Item = &'a Matrix>) -> Result<Matrix> {
    let mut data = Vec::new();
    let mut shape: Option<(usize, usize)> = None;
    let mut rows = 0;
    for p in parts {
        match shape {
            Some((_, c)) if c != p.cols() => {
                return Err(Error::ShapeMismatch {
                    op: "stack_rows",
                    left: shape.unwrap(),
                    right: p.shape(),
                })
            }
            _ => shape = Some(p.shape()),
        }
        rows += p.rows();
        data.extend_from_slice(p.data());
    }
    let cols = shape.ok_or(Error::Empty("stack_rows"))?.1;
    Matrix::from_vec(rows, cols, data)
}

pub(crate) fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..m.rows() {
        let p = softmax_unchecked(m.row(r));
        out.row_mut(r).copy_from_slice(&p);
    }
    out
}

/// Gradients of a scalar loss with respect to every node on the tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// `∂loss/∂node`, or `None` when the loss does not depend on the node.
    pub fn get(&self, id: NodeId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Like [`get`](Self::get) but materializes zeros for unreachable nodes.
    pub fn get_or_zeros(&self, tape: &Tape, id: NodeId) -> Matrix {
        self.get(id).cloned().unwrap_or_else(|| {
            let (r, c) = tape.value(id).shape();
            Matrix::zeros(r, c)
        })
    }

    pub fn take(&mut self, id: NodeId) -> Option<Matrix> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

fn accumulate(slot: &mut Option<Matrix>, shape: (usize, usize), f: impl FnOnce(&mut Matrix)) {
    let g = slot.get_or_insert_with(|| Matrix::zeros(shape.0, shape.1));
    f(g);
}

/// One reverse sweep from `loss`, which must be a `1 × 1` node.
pub fn backward(tape: &Tape, loss: NodeId) -> Result<Gradients> {
    let shape = tape.value(loss).shape();
    if shape != (1, 1) {
        return Err(Error::NonScalarLoss(shape));
    }
    for (i, node) in tape.nodes[..=loss.0].iter().enumerate() {
        if let Some(bad) = node.inputs().into_iter().find(|inp| inp.0 >= i) {
            return Err(Error::CycleDetected { node: i, input: bad.0 });
        }
    }

    let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
    grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

    for i in (0..=loss.0).rev() {
        let Some(g) = grads[i].take() else { continue };
        let node = &tape.nodes[i];
        let shape_of = |id: NodeId| tape.value(id).shape();
        match &node.op {
            Op::Leaf => {
                grads[i] = Some(g);
                continue;
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (tape.value(*a), tape.value(*b));
                accumulate(&mut grads[a.0], va.shape(), |ga| matmul_nt_acc(&g, vb, ga));
                accumulate(&mut grads[b.0], vb.shape(), |gb| matmul_tn_acc(va, &g, gb));
            }
            Op::Add(a, b) => {
                accumulate(&mut grads[a.0], shape_of(*a), |ga| ga.add_assign(&g));
                accumulate(&mut grads[b.0], shape_of(*b), |gb| gb.add_assign(&g));
            }
            Op::Sub(a, b) => {
                accumulate(&mut grads[a.0], shape_of(*a), |ga| ga.add_assign(&g));
                let neg = g.scale(-1.0);
                accumulate(&mut grads[b.0], shape_of(*b), |gb| gb.add_assign(&neg));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (tape.value(*a), tape.value(*b));
                let da = g.hadamard(vb)?;
                let db = g.hadamard(va)?;
                accumulate(&mut grads[a.0], va.shape(), |ga| ga.add_assign(&da));
                accumulate(&mut grads[b.0], vb.shape(), |gb| gb.add_assign(&db));
            }
            Op::AddRow(a, row) => {
                accumulate(&mut grads[a.0], shape_of(*a), |ga| ga.add_assign(&g));
                accumulate(&mut grads[row.0], shape_of(*row), |gr| {
                    for r in 0..g.rows() {
                        for (o, v) in gr.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                });
            }
            Op::Scale(a, k) => {
                let d = g.scale(*k);
                accumulate(&mut grads[a.0], shape_of(*a), |ga| ga.add_assign(&d));
            }
            Op::MulConst(a, c) => {
                let d = g.hadamard(c)?;
                accumulate(&mut grads[a.0], shape_of(*a), |ga| ga.add_assign(&d));
            }
            Op::Tanh(a) => {
                let d = g.zip_map(&node.value, "tanh'", |g, y| g * (1.0 - y * y))?;
                accumulate(&mut grads[a.0], shape_of(*a), |ga| ga.add_assign(&d));
            }
            Op::Sigmoid(a) => {
                let d = g.zip_map(&node.value, "sigmoid'", |g, y| g * y * (1.0 - y))?;
                accumulate(&mut grads[a.0], shape_of(*a), |ga| ga.add_assign(&d));
            }
            Op::Exp(a) => {
                let d = g.hadamard(&node.value)?;
                accumulate(&mut grads[a.0], shape_of(*a), |ga| ga.add_assign(&d));
            }
            Op::Log(a) => {
                let d = g.zip_map(tape.value(*a), "log'", |g, x| g / x)?;
                accumulate(&mut grads[a.0], shape_of(*a), |ga| ga.add_assign(&d));
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut d = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, &yv), &gv) in d.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o = yv * (gv - dot);
                    }
                }
                accumulate(&mut grads[a.0], shape_of(*a), |ga| ga.add_assign(&d));
            }
            Op::ConcatCols(a, b) => {
                let ca = tape.value(*a).cols();
                let cb = tape.value(*b).cols();
                accumulate(&mut grads[a.0], shape_of(*a), |ga| {
                    for r in 0..g.rows() {
                        for (o, v) in ga.row_mut(r).iter_mut().zip(&g.row(r)[..ca]) {
                            *o += v;
                        }
                    }
                });
                accumulate(&mut grads[b.0], shape_of(*b), |gb| {
                    for r in 0..g.rows() {
                        for (o, v) in gb.row_mut(r).iter_mut().zip(&g.row(r)[ca..ca + cb]) {
                            *o += v;
                        }
                    }
                });
            }
            Op::StackRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let (rows, cols) = shape_of(*p);
                    let block = &g.data()[offset * cols..(offset + rows) * cols];
                    accumulate(&mut grads[p.0], (rows, cols), |gp| {
                        for (o, v) in gp.data_mut().iter_mut().zip(block) {
                            *o += v;
                        }
                    });
                    offset += rows;
                }
            }
            Op::Row(a, r) => {
                accumulate(&mut grads[a.0], shape_of(*a), |ga| {
                    for (o, v) in ga.row_mut(*r).iter_mut().zip(g.data()) {
                        *o += v;
                    }
                });
            }
            Op::Transpose(a) => {
                let d = g.transpose();
                accumulate(&mut grads[a.0], shape_of(*a), |ga| ga.add_assign(&d));
            }
            Op::Sum(a) => {
                let s = g.get(0, 0);
                accumulate(&mut grads[a.0], shape_of(*a), |ga| {
                    ga.data_mut().iter_mut().for_each(|v| *v += s);
                });
            }
            Op::SoftmaxCrossEntropy { logits, target } => {
                let probs = node.aux.as_ref().expect("cross-entropy node caches its softmax");
                let s = g.get(0, 0);
                accumulate(&mut grads[logits.0], shape_of(*logits), |gl| {
                    for (j, (o, p)) in gl.data_mut().iter_mut().zip(probs).enumerate() {
                        let onehot = if j == *target { 1.0 } else { 0.0 };
                        *o += s * (p - onehot);
                    }
                });
            }
        }
    }
    Ok(Gradients { grads })
}
