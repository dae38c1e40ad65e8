//! One op vocabulary, two evaluators.
//!
//! Model code is written once against [`Backend`]. [`Eager`] evaluates
//! directly on matrices (inference), while [`Tape`] records the same ops for
//! reverse-mode differentiation (training).

use std::rc::Rc;

use super::matrix::Matrix;
use super::tape::{self, NodeId, Tape};
use crate::error::Result;

pub trait Backend {
    type Value: Clone;

    /// Wraps a matrix as a value; on the tape this creates a leaf.
    fn input(&mut self, m: Matrix) -> Self::Value;
    fn value<'a>(&'a self, v: &'a Self::Value) -> &'a Matrix;

    fn matmul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn sub(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn add_row(&mut self, a: &Self::Value, row: &Self::Value) -> Result<Self::Value>;
    fn mul_const(&mut self, a: &Self::Value, c: Matrix) -> Result<Self::Value>;
    fn tanh(&mut self, a: &Self::Value) -> Self::Value;
    fn sigmoid(&mut self, a: &Self::Value) -> Self::Value;
    fn softmax_rows(&mut self, a: &Self::Value) -> Self::Value;
    fn concat_cols(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn stack_rows(&mut self, parts: &[Self::Value]) -> Result<Self::Value>;
    fn row(&mut self, a: &Self::Value, r: usize) -> Result<Self::Value>;
    fn transpose(&mut self, a: &Self::Value) -> Self::Value;
}

/// Direct evaluation; values are shared, immutable matrices.
#[derive(Clone, Copy, Debug, Default)]
pub struct Eager;

type Shared = Rc<Matrix>;

impl Backend for Eager {
    type Value = Shared;

    fn input(&mut self, m: Matrix) -> Shared {
        Rc::new(m)
    }

    fn value<'a>(&'a self, v: &'a Shared) -> &'a Matrix {
        v
    }

    fn matmul(&mut self, a: &Shared, b: &Shared) -> Result<Shared> {
        Ok(Rc::new(a.matmul(b)?))
    }

    fn add(&mut self, a: &Shared, b: &Shared) -> Result<Shared> {
        Ok(Rc::new(a.add(b)?))
    }

    fn sub(&mut self, a: &Shared, b: &Shared) -> Result<Shared> {
        Ok(Rc::new(a.sub(b)?))
    }

    fn mul(&mut self, a: &Shared, b: &Shared) -> Result<Shared> {
        Ok(Rc::new(a.hadamard(b)?))
    }

    fn add_row(&mut self, a: &Shared, row: &Shared) -> Result<Shared> {
        Ok(Rc::new(a.add_row(row)?))
    }

    fn mul_const(&mut self, a: &Shared, c: Matrix) -> Result<Shared> {
        Ok(Rc::new(a.hadamard(&c)?))
    }

    fn tanh(&mut self, a: &Shared) -> Shared {
        Rc::new(a.map(f64::tanh))
    }

    fn sigmoid(&mut self, a: &Shared) -> Shared {
        Rc::new(a.map(tape::sigmoid))
    }

    fn softmax_rows(&mut self, a: &Shared) -> Shared {
        Rc::new(tape::softmax_rows(a))
    }

    fn concat_cols(&mut self, a: &Shared, b: &Shared) -> Result<Shared> {
        Ok(Rc::new(a.concat_cols(b)?))
    }

    fn stack_rows(&mut self, parts: &[Shared]) -> Result<Shared> {
        Ok(Rc::new(tape::stack_rows(parts.iter().map(|p| p.as_ref()))?))
    }

    fn row(&mut self, a: &Shared, r: usize) -> Result<Shared> {
        if r >= a.rows() {
            return Err(crate::error::Error::invalid(format!(
                "row {r} out of range for shape {:?}",
                a.shape()
            )));
        }
        Ok(Rc::new(Matrix::row_vector(a.row(r))))
    }

    fn transpose(&mut self, a: &Shared) -> Shared {
        Rc::new(a.transpose())
    }
}

impl Backend for Tape {
    type Value = NodeId;

    fn input(&mut self, m: Matrix) -> NodeId {
        self.leaf(m)
    }

    fn value<'a>(&'a self, v: &'a NodeId) -> &'a Matrix {
        Tape::value(self, *v)
    }

    fn matmul(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        Tape::matmul(self, *a, *b)
    }

    fn add(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        Tape::add(self, *a, *b)
    }

    fn sub(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        Tape::sub(self, *a, *b)
    }

    fn mul(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        Tape::mul(self, *a, *b)
    }

    fn add_row(&mut self, a: &NodeId, row: &NodeId) -> Result<NodeId> {
        Tape::add_row(self, *a, *row)
    }

    fn mul_const(&mut self, a: &NodeId, c: Matrix) -> Result<NodeId> {
        Tape::mul_const(self, *a, c)
    }

    fn tanh(&mut self, a: &NodeId) -> NodeId {
        Tape::tanh(self, *a)
    }

    fn sigmoid(&mut self, a: &NodeId) -> NodeId {
        Tape::sigmoid(self, *a)
    }

    fn softmax_rows(&mut self, a: &NodeId) -> NodeId {
        Tape::softmax_rows(self, *a)
    }

    fn concat_cols(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        Tape::concat_cols(self, *a, *b)
    }

    fn stack_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        Tape::stack_rows(self, parts)
    }

    fn row(&mut self, a: &NodeId, r: usize) -> Result<NodeId> {
        Tape::row(self, *a, r)
    }

    fn transpose(&mut self, a: &NodeId) -> NodeId {
        Tape::transpose(self, *a)
    }
}
