//! Forward computation of the attention encoder–decoder.
//!
//! The generic functions here are shared by eager inference ([`Model`]) and
//! by the differentiable training loss ([`loss_on_tape`]).

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::params::{Dims, GruCell, ModelParams, Weights};
use super::vocab::{BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::numkit::{log_prob_at, softmax, Backend, DropoutMask, Eager, Matrix, NodeId, Tape};

/// Input frames `V` (`W × C`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Matrix", into = "Matrix")]
pub struct FeatureSequence(Matrix);

impl FeatureSequence {
    pub fn new(frames: Matrix) -> Result<Self> {
        if frames.rows() == 0 || frames.cols() == 0 {
            return Err(Error::Empty("feature sequence"));
        }
        if !frames.is_finite() {
            return Err(Error::invalid("feature sequence has non-finite values"));
        }
        Ok(Self(frames))
    }

    pub fn frames(&self) -> &Matrix {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.rows() == 0
    }

    pub fn channels(&self) -> usize {
        self.0.cols()
    }
}

impl TryFrom<Matrix> for FeatureSequence {
    type Error = Error;

    fn try_from(m: Matrix) -> Result<Self> {
        Self::new(m)
    }
}

impl From<FeatureSequence> for Matrix {
    fn from(f: FeatureSequence) -> Matrix {
        f.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderState {
    pub hidden: Vec<f64>,
    /// Number of decode steps taken so far.
    pub step: usize,
}

impl DecoderState {
    pub fn initial(dims: &Dims) -> Self {
        Self {
            hidden: vec![0.0; dims.hidden],
            step: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub id: u64,
    pub features: FeatureSequence,
    /// Token indices terminated by EOS.
    pub label: Vec<usize>,
}

pub(crate) fn check_frames(dims: &Dims, v: &FeatureSequence) -> Result<()> {
    if v.channels() != dims.input {
        return Err(Error::ShapeMismatch {
            op: "encode",
            left: v.frames().shape(),
            right: (v.len(), dims.input),
        });
    }
    Ok(())
}

pub(crate) fn check_tokens(dims: &Dims, tokens: &[usize]) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::Empty("token sequence"));
    }
    if tokens.len() > dims.max_len {
        return Err(Error::LabelTooLong {
            len: tokens.len(),
            max: dims.max_len,
        });
    }
    if let Some(&t) = tokens.iter().find(|&&t| t >= dims.vocab) {
        return Err(Error::TokenOutOfRange {
            token: t,
            size: dims.vocab,
        });
    }
    Ok(())
}

/// Labels end in EOS, except truncated ones that fill all `max_len` steps.
pub(crate) fn check_label(dims: &Dims, label: &[usize]) -> Result<()> {
    check_tokens(dims, label)?;
    if label.last() != Some(&EOS) && label.len() != dims.max_len {
        return Err(Error::invalid("label must end with EOS or span max_len steps"));
    }
    Ok(())
}

fn gru_step<B: Backend>(b: &mut B, cell: &GruCell<B::Value>, x_proj: [&B::Value; 3], h: &B::Value) -> Result<B::Value> {
    let hz = b.matmul(h, &cell.u_z)?;
    let z = b.add(x_proj[0], &hz)?;
    let z = b.sigmoid(&z);
    let hr = b.matmul(h, &cell.u_r)?;
    let r = b.add(x_proj[1], &hr)?;
    let r = b.sigmoid(&r);
    let rh = b.mul(&r, h)?;
    let hn = b.matmul(&rh, &cell.u_n)?;
    let n = b.add(x_proj[2], &hn)?;
    let n = b.tanh(&n);
    // (1 - z) ⊙ n + z ⊙ h  =  n + z ⊙ (h - n)
    let diff = b.sub(h, &n)?;
    let zd = b.mul(&z, &diff)?;
    b.add(&n, &zd)
}

fn input_projections<B: Backend>(b: &mut B, cell: &GruCell<B::Value>, x: &B::Value) -> Result<[B::Value; 3]> {
    let mut proj = |w: &B::Value, bias: &B::Value| -> Result<B::Value> {
        let p = b.matmul(x, w)?;
        b.add_row(&p, bias)
    };
    Ok([
        proj(&cell.w_z, &cell.b_z)?,
        proj(&cell.w_r, &cell.b_r)?,
        proj(&cell.w_n, &cell.b_n)?,
    ])
}

fn run_direction<B: Backend>(
    b: &mut B,
    cell: &GruCell<B::Value>,
    frames: &B::Value,
    width: usize,
    reverse: bool,
) -> Result<B::Value> {
    let rows = b.value(frames).rows();
    let proj = input_projections(b, cell, frames)?;
    let mut h = b.input(Matrix::zeros(1, width));
    let mut outputs: Vec<Option<B::Value>> = vec![None; rows];
    let order: Vec<usize> = if reverse {
        (0..rows).rev().collect()
    } else {
        (0..rows).collect()
    };
    for t in order {
        let xz = b.row(&proj[0], t)?;
        let xr = b.row(&proj[1], t)?;
        let xn = b.row(&proj[2], t)?;
        h = gru_step(b, cell, [&xz, &xr, &xn], &h)?;
        outputs[t] = Some(h.clone());
    }
    let outputs: Vec<B::Value> = outputs.into_iter().map(|o| o.expect("every frame visited")).collect();
    b.stack_rows(&outputs)
}

/// Bidirectional encoder; returns `H` (`W × D`) with dropout applied to every
/// frame when a mask is given.
pub(crate) fn encode_generic<B: Backend>(
    b: &mut B,
    w: &Weights<B::Value>,
    dims: &Dims,
    frames: &B::Value,
    mask: Option<&DropoutMask>,
) -> Result<B::Value> {
    let half = dims.hidden / 2;
    let fwd = run_direction(b, &w.enc_fwd, frames, half, false)?;
    let bwd = run_direction(b, &w.enc_bwd, frames, half, true)?;
    let h = b.concat_cols(&fwd, &bwd)?;
    match mask {
        Some(mask) => apply_mask(b, &h, mask),
        None => Ok(h),
    }
}

fn apply_mask<B: Backend>(b: &mut B, h: &B::Value, mask: &DropoutMask) -> Result<B::Value> {
    let (rows, cols) = b.value(h).shape();
    if mask.units() != cols {
        return Err(Error::ShapeMismatch {
            op: "dropout",
            left: (rows, cols),
            right: (1, mask.units()),
        });
    }
    let mult = mask.multipliers();
    let mut m = Matrix::zeros(rows, cols);
    for r in 0..rows {
        m.row_mut(r).copy_from_slice(&mult);
    }
    b.mul_const(h, m)
}

/// Attention keys `H · W_c`, reused across decode steps.
pub(crate) fn attention_keys<B: Backend>(b: &mut B, w: &Weights<B::Value>, h: &B::Value) -> Result<B::Value> {
    b.matmul(h, &w.att_key)
}

/// `e_i = w_aᵀ tanh(W_b s + W_c h_i + b)`, `α = softmax(e)`, `c = Σ α_i h_i`.
pub(crate) fn attend<B: Backend>(
    b: &mut B,
    w: &Weights<B::Value>,
    s_prev: &B::Value,
    h: &B::Value,
    keys: &B::Value,
) -> Result<(B::Value, B::Value)> {
    let q = b.matmul(s_prev, &w.att_query)?;
    let q = b.add(&q, &w.att_bias)?;
    let pre = b.add_row(keys, &q)?;
    let act = b.tanh(&pre);
    let scores = b.matmul(&act, &w.att_score)?;
    let scores = b.transpose(&scores);
    let alpha = b.softmax_rows(&scores);
    let ctx = b.matmul(&alpha, h)?;
    Ok((ctx, alpha))
}

/// One decoder step: returns the new state and the output logits.
pub(crate) fn decode_step<B: Backend>(
    b: &mut B,
    w: &Weights<B::Value>,
    prev_token: usize,
    ctx: &B::Value,
    s_prev: &B::Value,
) -> Result<(B::Value, B::Value)> {
    let emb = b.row(&w.embedding, prev_token)?;
    let x = b.concat_cols(&emb, ctx)?;
    let proj = input_projections(b, &w.dec, &x)?;
    let s = gru_step(b, &w.dec, [&proj[0], &proj[1], &proj[2]], s_prev)?;
    let logits = b.matmul(&s, &w.out_w)?;
    let logits = b.add(&logits, &w.out_b)?;
    Ok((s, logits))
}

/// Teacher-forced logits for every step of `tokens` (inputs BOS, y_1, …).
fn teacher_forced_logits<B: Backend>(
    b: &mut B,
    w: &Weights<B::Value>,
    dims: &Dims,
    h: &B::Value,
    tokens: &[usize],
) -> Result<Vec<B::Value>> {
    let keys = attention_keys(b, w, h)?;
    let mut s = b.input(Matrix::zeros(1, dims.hidden));
    let mut prev = BOS;
    let mut out = Vec::with_capacity(tokens.len());
    for &y in tokens {
        let (ctx, _) = attend(b, w, &s, h, &keys)?;
        let (s_next, logits) = decode_step(b, w, prev, &ctx, &s)?;
        out.push(logits);
        s = s_next;
        prev = y;
    }
    Ok(out)
}

/// Records the teacher-forced cross-entropy of `sample` on `tape` and
/// returns the scalar loss node. PAD targets contribute nothing.
pub fn loss_on_tape(
    tape: &mut Tape,
    w: &Weights<NodeId>,
    dims: &Dims,
    sample: &LabeledSample,
    mask: Option<&DropoutMask>,
) -> Result<NodeId> {
    check_frames(dims, &sample.features)?;
    check_label(dims, &sample.label)?;
    let frames = tape.leaf(sample.features.frames().clone());
    let h = encode_generic(tape, w, dims, &frames, mask)?;
    let logits = teacher_forced_logits(tape, w, dims, &h, &sample.label)?;
    let mut total: Option<NodeId> = None;
    for (l, &y) in logits.iter().zip(&sample.label) {
        if y == PAD {
            continue;
        }
        let ce = tape.softmax_cross_entropy(*l, y)?;
        total = Some(match total {
            Some(t) => tape.add(t, ce)?,
            None => ce,
        });
    }
    Ok(total.unwrap_or_else(|| tape.leaf(Matrix::zeros(1, 1))))
}

/// Encoder output ready for decoding: `H` (after dropout, if any) and its
/// attention keys.
#[derive(Clone, Debug)]
pub struct Encoded {
    raw: Rc<Matrix>,
    h: Rc<Matrix>,
    keys: Rc<Matrix>,
}

impl Encoded {
    pub fn h(&self) -> &Matrix {
        &self.h
    }

    /// Undropped encoder output.
    pub fn raw(&self) -> &Matrix {
        &self.raw
    }
}

/// Output of one eager decoder step.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub state: DecoderState,
    pub logits: Vec<f64>,
    pub attention: Vec<f64>,
}

impl StepOutput {
    pub fn probs(&self) -> Vec<f64> {
        softmax(&self.logits).expect("logits are finite and non-empty")
    }

    pub fn log_prob(&self, token: usize) -> f64 {
        log_prob_at(&self.logits, token)
    }
}

/// Eager inference handle over a parameter set.
pub struct Model<'p> {
    params: &'p ModelParams,
    w: Weights<Rc<Matrix>>,
}

impl<'p> Model<'p> {
    pub fn new(params: &'p ModelParams) -> Self {
        Self {
            params,
            w: params.weights.map(|m| Rc::new(m.clone())),
        }
    }

    pub fn params(&self) -> &ModelParams {
        self.params
    }

    pub fn dims(&self) -> &Dims {
        &self.params.dims
    }

    pub fn encode(&self, v: &FeatureSequence, mask: Option<&DropoutMask>) -> Result<Encoded> {
        check_frames(self.dims(), v)?;
        let mut b = Eager;
        let frames = Rc::new(v.frames().clone());
        let raw = encode_generic(&mut b, &self.w, self.dims(), &frames, None)?;
        self.finish_encoding(raw, mask)
    }

    /// Re-applies a different dropout mask to an existing encoding.
    pub fn remask(&self, enc: &Encoded, mask: Option<&DropoutMask>) -> Result<Encoded> {
        self.finish_encoding(enc.raw.clone(), mask)
    }

    fn finish_encoding(&self, raw: Rc<Matrix>, mask: Option<&DropoutMask>) -> Result<Encoded> {
        let mut b = Eager;
        let h = match mask {
            Some(m) => apply_mask(&mut b, &raw, m)?,
            None => raw.clone(),
        };
        let keys = attention_keys(&mut b, &self.w, &h)?;
        Ok(Encoded { raw, h, keys })
    }

    pub fn initial_state(&self) -> DecoderState {
        DecoderState::initial(self.dims())
    }

    /// Attention over `enc` from `state`, then one decoder step fed `prev_token`.
    pub fn step(&self, enc: &Encoded, prev_token: usize, state: &DecoderState) -> Result<StepOutput> {
        if prev_token >= self.dims().vocab {
            return Err(Error::TokenOutOfRange {
                token: prev_token,
                size: self.dims().vocab,
            });
        }
        let mut b = Eager;
        let s_prev = Rc::new(Matrix::row_vector(&state.hidden));
        let (ctx, alpha) = attend(&mut b, &self.w, &s_prev, &enc.h, &enc.keys)?;
        let (s, logits) = decode_step(&mut b, &self.w, prev_token, &ctx, &s_prev)?;
        Ok(StepOutput {
            state: DecoderState {
                hidden: s.data().to_vec(),
                step: state.step + 1,
            },
            logits: logits.data().to_vec(),
            attention: alpha.data().to_vec(),
        })
    }

    /// Per-step output distributions with `tokens` fed as previous inputs.
    pub fn teacher_forced_dists(&self, enc: &Encoded, tokens: &[usize]) -> Result<Vec<Vec<f64>>> {
        check_tokens(self.dims(), tokens)?;
        let mut state = self.initial_state();
        let mut prev = BOS;
        let mut out = Vec::with_capacity(tokens.len());
        for &y in tokens {
            let step = self.step(enc, prev, &state)?;
            out.push(step.probs());
            state = step.state;
            prev = y;
        }
        Ok(out)
    }

    /// `ln P(tokens | X)` under teacher forcing. Sequences without a final EOS
    /// score as prefixes (truncated hypotheses).
    pub fn sequence_log_prob(&self, enc: &Encoded, tokens: &[usize]) -> Result<f64> {
        check_tokens(self.dims(), tokens)?;
        let mut state = self.initial_state();
        let mut prev = BOS;
        let mut total = 0.0;
        for &y in tokens {
            let step = self.step(enc, prev, &state)?;
            total += step.log_prob(y);
            state = step.state;
            prev = y;
        }
        Ok(total)
    }

    pub fn loss(&self, sample: &LabeledSample, mask: Option<&DropoutMask>) -> Result<f64> {
        check_label(self.dims(), &sample.label)?;
        let enc = self.encode(&sample.features, mask)?;
        let mut state = self.initial_state();
        let mut prev = BOS;
        let mut total = 0.0;
        for &y in &sample.label {
            let step = self.step(&enc, prev, &state)?;
            if y != PAD {
                total -= step.log_prob(y);
            }
            state = step.state;
            prev = y;
        }
        Ok(total)
    }
}

/// Encoder output `H` (`W × D`).
pub fn encode(params: &ModelParams, v: &FeatureSequence, mask: Option<&DropoutMask>) -> Result<Matrix> {
    Ok(Model::new(params).encode(v, mask)?.h().clone())
}

/// Context vector `c_t` and attention weights `α_t` for the previous state.
pub fn attention_context(params: &ModelParams, s_prev: &DecoderState, h: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
    if h.rows() == 0 {
        return Err(Error::Empty("attention over empty H"));
    }
    if h.cols() != params.dims.hidden {
        return Err(Error::ShapeMismatch {
            op: "attention_context",
            left: h.shape(),
            right: (h.rows(), params.dims.hidden),
        });
    }
    let model = Model::new(params);
    let mut b = Eager;
    let h = Rc::new(h.clone());
    let keys = attention_keys(&mut b, &model.w, &h)?;
    let s = Rc::new(Matrix::row_vector(&s_prev.hidden));
    let (ctx, alpha) = attend(&mut b, &model.w, &s, &h, &keys)?;
    Ok((ctx.data().to_vec(), alpha.data().to_vec()))
}

/// Decoder update `s_t = cell([emb(y_{t-1}); c_t], s_{t-1})` and output
/// distribution `softmax(W_0 s_t + b_0)`.
pub fn decoder_step(
    params: &ModelParams,
    prev_token: usize,
    c_t: &[f64],
    s_prev: &DecoderState,
) -> Result<(DecoderState, Vec<f64>)> {
    if prev_token >= params.dims.vocab {
        return Err(Error::TokenOutOfRange {
            token: prev_token,
            size: params.dims.vocab,
        });
    }
    let model = Model::new(params);
    let mut b = Eager;
    let ctx = Rc::new(Matrix::row_vector(c_t));
    let s = Rc::new(Matrix::row_vector(&s_prev.hidden));
    let (s, logits) = decode_step(&mut b, &model.w, prev_token, &ctx, &s)?;
    Ok((
        DecoderState {
            hidden: s.data().to_vec(),
            step: s_prev.step + 1,
        },
        softmax(logits.data())?,
    ))
}

/// Summed teacher-forced cross-entropy of one sample.
pub fn teacher_forced_loss(params: &ModelParams, sample: &LabeledSample, mask: Option<&DropoutMask>) -> Result<f64> {
    Model::new(params).loss(sample, mask)
}

/// `ln P(Y | X, θ)` with no dropout.
pub fn sequence_log_prob(params: &ModelParams, v: &FeatureSequence, y: &[usize]) -> Result<f64> {
    let model = Model::new(params);
    let enc = model.encode(v, None)?;
    model.sequence_log_prob(&enc, y)
}
