//! Trainable weights of the attention encoder–decoder.
//!
//! All layers use the row-vector convention `y = x · W + b`, so a weight
//! mapping `n` inputs to `m` outputs is stored as an `n × m` matrix.

use serde::{Deserialize, Serialize};

use super::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::numkit::{Matrix, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Feature channels per input frame (`C`).
    pub input: usize,
    /// Encoder output width and decoder state width (`D`). Must be even: each
    /// encoder direction contributes `D / 2` units.
    pub hidden: usize,
    /// Token embedding width.
    pub embed: usize,
    /// Attention projection width.
    pub attention: usize,
    /// Vocabulary size including reserved tokens (`E`).
    pub vocab: usize,
    /// Maximum number of decode steps, EOS included.
    pub max_len: usize,
}

impl Dims {
    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.embed == 0 || self.attention == 0 {
            return Err(Error::invalid(format!("zero-sized dimension in {self:?}")));
        }
        if self.hidden < 2 || !self.hidden.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "hidden width {} must be even and >= 2",
                self.hidden
            )));
        }
        if self.vocab < 4 {
            return Err(Error::invalid(format!("vocabulary size {} < 4", self.vocab)));
        }
        if self.max_len == 0 {
            return Err(Error::invalid("max_len must be >= 1"));
        }
        Ok(())
    }
}

/// Layer widths chosen independently of the data (input width, vocabulary
/// and decode budget come from the task).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Architecture {
    pub hidden: usize,
    pub embed: usize,
    pub attention: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            hidden: 32,
            embed: 16,
            attention: 32,
        }
    }
}

impl Architecture {
    pub fn dims(&self, input: usize, vocab: usize, max_len: usize) -> Dims {
        Dims {
            input,
            hidden: self.hidden,
            embed: self.embed,
            attention: self.attention,
            vocab,
            max_len,
        }
    }
}

/// Gated recurrent cell:
/// `z = σ(x·W_z + h·U_z + b_z)`, `r = σ(x·W_r + h·U_r + b_r)`,
/// `n = tanh(x·W_n + (r⊙h)·U_n + b_n)`, `h' = (1 − z)⊙n + z⊙h`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruCell<T> {
    pub w_z: T,
    pub u_z: T,
    pub b_z: T,
    pub w_r: T,
    pub u_r: T,
    pub b_r: T,
    pub w_n: T,
    pub u_n: T,
    pub b_n: T,
}

impl<T> GruCell<T> {
    const NAMES: [&'static str; 9] = ["w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_n", "u_n", "b_n"];

    fn fields(&self) -> [&T; 9] {
        [
            &self.w_z, &self.u_z, &self.b_z, &self.w_r, &self.u_r, &self.b_r, &self.w_n, &self.u_n, &self.b_n,
        ]
    }

    fn fields_mut(&mut self) -> [&mut T; 9] {
        [
            &mut self.w_z,
            &mut self.u_z,
            &mut self.b_z,
            &mut self.w_r,
            &mut self.u_r,
            &mut self.b_r,
            &mut self.w_n,
            &mut self.u_n,
            &mut self.b_n,
        ]
    }

    fn from_iter(it: &mut impl Iterator<Item = T>) -> Self {
        let mut next = || it.next().expect("tensor count matches layout");
        Self {
            w_z: next(),
            u_z: next(),
            b_z: next(),
            w_r: next(),
            u_r: next(),
            b_r: next(),
            w_n: next(),
            u_n: next(),
            b_n: next(),
        }
    }
}

/// Every trainable tensor, generic over its representation so the same layout
/// holds matrices, tape node ids or gradients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Weights<T> {
    pub enc_fwd: GruCell<T>,
    pub enc_bwd: GruCell<T>,
    /// `W_b`: decoder state → attention space (`D × A`).
    pub att_query: T,
    /// `W_c`: encoder frame → attention space (`D × A`).
    pub att_key: T,
    /// `b` (`1 × A`).
    pub att_bias: T,
    /// `w_a` (`A × 1`).
    pub att_score: T,
    /// Token embeddings (`E × embed`).
    pub embedding: T,
    /// Decoder cell over `[embedding; context]`.
    pub dec: GruCell<T>,
    /// `W_0` stored transposed (`D × E`).
    pub out_w: T,
    /// `b_0` (`1 × E`).
    pub out_b: T,
}

pub const TENSOR_COUNT: usize = 34;

impl<T> Weights<T> {
    pub fn names() -> Vec<String> {
        let mut out = Vec::with_capacity(TENSOR_COUNT);
        for prefix in ["enc_fwd", "enc_bwd"] {
            out.extend(GruCell::<T>::NAMES.iter().map(|n| format!("{prefix}.{n}")));
        }
        out.extend(["att_query", "att_key", "att_bias", "att_score", "embedding"].map(String::from));
        out.extend(GruCell::<T>::NAMES.iter().map(|n| format!("dec.{n}")));
        out.extend(["out_w", "out_b"].map(String::from));
        out
    }

    /// Tensors in canonical order (matches [`names`](Self::names)).
    pub fn tensors(&self) -> Vec<&T> {
        let mut out = Vec::with_capacity(TENSOR_COUNT);
        out.extend(self.enc_fwd.fields());
        out.extend(self.enc_bwd.fields());
        out.extend([
            &self.att_query,
            &self.att_key,
            &self.att_bias,
            &self.att_score,
            &self.embedding,
        ]);
        out.extend(self.dec.fields());
        out.extend([&self.out_w, &self.out_b]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut T> {
        let mut out = Vec::with_capacity(TENSOR_COUNT);
        out.extend(self.enc_fwd.fields_mut());
        out.extend(self.enc_bwd.fields_mut());
        out.extend([
            &mut self.att_query,
            &mut self.att_key,
            &mut self.att_bias,
            &mut self.att_score,
            &mut self.embedding,
        ]);
        out.extend(self.dec.fields_mut());
        out.extend([&mut self.out_w, &mut self.out_b]);
        out
    }

    pub fn from_tensors(tensors: Vec<T>) -> Result<Self> {
        if tensors.len() != TENSOR_COUNT {
            return Err(Error::invalid(format!(
                "expected {TENSOR_COUNT} tensors, got {}",
                tensors.len()
            )));
        }
        let mut it = tensors.into_iter();
        let enc_fwd = GruCell::from_iter(&mut it);
        let enc_bwd = GruCell::from_iter(&mut it);
        let mut next = || it.next().expect("length checked");
        let (att_query, att_key, att_bias, att_score, embedding) = (next(), next(), next(), next(), next());
        let dec = GruCell::from_iter(&mut it);
        let (out_w, out_b) = (it.next().expect("length checked"), it.next().expect("length checked"));
        Ok(Self {
            enc_fwd,
            enc_bwd,
            att_query,
            att_key,
            att_bias,
            att_score,
            embedding,
            dec,
            out_w,
            out_b,
        })
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Weights<U> {
        Weights::from_tensors(self.tensors().into_iter().map(&mut f).collect()).expect("same layout")
    }
}

impl Weights<Matrix> {
    /// Expected `(rows, cols)` of every tensor, in canonical order.
    pub fn shapes(dims: &Dims) -> Vec<(usize, usize)> {
        let half = dims.hidden / 2;
        let gru = |input: usize, hidden: usize| {
            [
                (input, hidden),
                (hidden, hidden),
                (1, hidden),
                (input, hidden),
                (hidden, hidden),
                (1, hidden),
                (input, hidden),
                (hidden, hidden),
                (1, hidden),
            ]
        };
        let mut out = Vec::with_capacity(TENSOR_COUNT);
        out.extend(gru(dims.input, half));
        out.extend(gru(dims.input, half));
        out.extend([
            (dims.hidden, dims.attention),
            (dims.hidden, dims.attention),
            (1, dims.attention),
            (dims.attention, 1),
            (dims.vocab, dims.embed),
        ]);
        out.extend(gru(dims.embed + dims.hidden, dims.hidden));
        out.extend([(dims.hidden, dims.vocab), (1, dims.vocab)]);
        out
    }

    pub fn zeros(dims: &Dims) -> Self {
        let tensors = Self::shapes(dims)
            .into_iter()
            .map(|(r, c)| Matrix::zeros(r, c))
            .collect();
        Self::from_tensors(tensors).expect("shape list has canonical length")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dims: Dims,
    pub vocab: Vocabulary,
    pub weights: Weights<Matrix>,
}

impl ModelParams {
    /// He-style initialization: weights `~ N(0, 2 / fan_in)`, biases zero.
    pub fn init(dims: Dims, vocab: Vocabulary, rng: &mut Rng) -> Result<Self> {
        let params = Self::zeros(dims, vocab)?;
        let mut params = params;
        for (name, m) in Weights::<Matrix>::names().iter().zip(params.weights.tensors_mut()) {
            if is_bias(name) {
                continue;
            }
            let std = (2.0 / m.rows() as f64).sqrt();
            for v in m.data_mut() {
                *v = rng.normal() * std;
            }
        }
        Ok(params)
    }

    pub fn zeros(dims: Dims, vocab: Vocabulary) -> Result<Self> {
        dims.validate()?;
        if vocab.size() != dims.vocab {
            return Err(Error::invalid(format!(
                "vocabulary has {} tokens but dims.vocab = {}",
                vocab.size(),
                dims.vocab
            )));
        }
        Ok(Self {
            weights: Weights::zeros(&dims),
            dims,
            vocab,
        })
    }

    /// Checks every tensor's shape against `dims` and that all values are finite.
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        let names = Weights::<Matrix>::names();
        for ((name, m), shape) in names
            .iter()
            .zip(self.weights.tensors())
            .zip(Weights::shapes(&self.dims))
        {
            if m.shape() != shape {
                return Err(Error::invalid(format!(
                    "{name}: shape {:?}, expected {shape:?}",
                    m.shape()
                )));
            }
            if !m.is_finite() {
                return Err(Error::invalid(format!("{name}: non-finite value")));
            }
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.tensors().iter().map(|m| m.len()).sum()
    }
}

fn is_bias(name: &str) -> bool {
    name.ends_with(".b_z") || name.ends_with(".b_r") || name.ends_with(".b_n") || name == "att_bias" || name == "out_b"
}
