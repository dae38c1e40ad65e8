//! Deterministic inference: beam search and pseudo-label assignment.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recognizer::{DecoderState, Encoded, FeatureSequence, Model, ModelParams, BOS, EOS, FIRST_SYMBOL};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// Tokens ending in EOS, or `s_max` real symbols when truncated.
    pub tokens: Vec<usize>,
    /// `ln P(tokens | X, θ)`.
    pub log_prob: f64,
    /// True when the search stopped at `s_max` before emitting EOS.
    pub truncated: bool,
}

impl Hypothesis {
    /// Number of decode steps, the EOS step included.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Real-symbol tokens (EOS stripped).
    pub fn symbols(&self) -> &[usize] {
        match self.tokens.last() {
            Some(&EOS) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

/// Ranking used throughout: higher log-probability first, then shorter, then
/// lexicographically smaller tokens.
pub fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.log_prob
        .total_cmp(&a.log_prob)
        .then(a.tokens.len().cmp(&b.tokens.len()))
        .then_with(|| a.tokens.cmp(&b.tokens))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSet {
    hypotheses: Vec<Hypothesis>,
    beam_width: usize,
}

impl HypothesisSet {
    /// Builds a set, sorting by [`rank`]. Token sequences must be distinct.
    pub fn new(mut hypotheses: Vec<Hypothesis>, beam_width: usize) -> Result<Self> {
        if beam_width == 0 {
            return Err(Error::invalid("beam width must be >= 1"));
        }
        if hypotheses.len() > beam_width {
            return Err(Error::invalid(format!(
                "{} hypotheses exceed beam width {beam_width}",
                hypotheses.len()
            )));
        }
        hypotheses.sort_by(rank);
        for (i, h) in hypotheses.iter().enumerate() {
            if h.tokens.is_empty() {
                return Err(Error::Empty("hypothesis tokens"));
            }
            if !(h.log_prob <= 0.0) {
                return Err(Error::invalid(format!("hypothesis log-probability {} > 0", h.log_prob)));
            }
            if hypotheses[..i].iter().any(|o| o.tokens == h.tokens) {
                return Err(Error::invalid("duplicate hypothesis token sequence"));
            }
        }
        Ok(Self { hypotheses, beam_width })
    }

    pub fn hypotheses(&self) -> &[Hypothesis] {
        &self.hypotheses
    }

    pub fn beam_width(&self) -> usize {
        self.beam_width
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    pub fn best(&self) -> Option<&Hypothesis> {
        self.hypotheses.first()
    }

    pub fn log_probs(&self) -> Vec<f64> {
        self.hypotheses.iter().map(|h| h.log_prob).collect()
    }
}

struct Beam {
    hyp: Hypothesis,
    state: Option<DecoderState>,
}

impl Beam {
    fn finished(&self) -> bool {
        self.state.is_none()
    }
}

/// Beam search over an already-encoded input. Finished beams stay in the
/// pool and compete with live ones; search ends once the best `beam_width`
/// entries are all finished or `s_max` steps have been taken.
pub fn beam_search_encoded(model: &Model, enc: &Encoded, beam_width: usize, s_max: usize) -> Result<HypothesisSet> {
    if beam_width == 0 {
        return Err(Error::invalid("beam width must be >= 1"));
    }
    let dims = model.dims();
    if s_max == 0 || s_max > dims.max_len {
        return Err(Error::invalid(format!("s_max {s_max} outside 1..={}", dims.max_len)));
    }
    let mut pool = vec![Beam {
        hyp: Hypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
            truncated: false,
        },
        state: Some(model.initial_state()),
    }];
    for step in 1..=s_max {
        if pool.iter().all(Beam::finished) {
            break;
        }
        let mut next = Vec::with_capacity(pool.len() * dims.vocab);
        for beam in pool {
            let Some(state) = &beam.state else {
                next.push(beam);
                continue;
            };
            let prev = beam.hyp.tokens.last().copied().unwrap_or(BOS);
            let out = model.step(enc, prev, state)?;
            for tok in std::iter::once(EOS).chain(FIRST_SYMBOL..dims.vocab) {
                let mut tokens = beam.hyp.tokens.clone();
                tokens.push(tok);
                let done = tok == EOS || step == s_max;
                next.push(Beam {
                    hyp: Hypothesis {
                        tokens,
                        log_prob: beam.hyp.log_prob + out.log_prob(tok),
                        truncated: tok != EOS && step == s_max,
                    },
                    state: if done { None } else { Some(out.state.clone()) },
                });
            }
        }
        next.sort_by(|a, b| rank(&a.hyp, &b.hyp));
        next.truncate(beam_width);
        pool = next;
    }
    HypothesisSet::new(pool.into_iter().map(|b| b.hyp).collect(), beam_width)
}

/// Top-`beam_width` hypotheses for `v` under the deterministic (no-dropout) model.
pub fn beam_search(
    params: &ModelParams,
    v: &FeatureSequence,
    beam_width: usize,
    s_max: usize,
) -> Result<HypothesisSet> {
    let model = Model::new(params);
    let enc = model.encode(v, None)?;
    beam_search_encoded(&model, &enc, beam_width, s_max)
}

/// Step-wise argmax decoding (beam width 1).
pub fn greedy(params: &ModelParams, v: &FeatureSequence, s_max: usize) -> Result<Hypothesis> {
    let set = beam_search(params, v, 1, s_max)?;
    Ok(set.hypotheses[0].clone())
}

/// The most probable hypothesis; ties go to the shorter, then
/// lexicographically smaller sequence.
pub fn assign_pseudo_label(hyps: &HypothesisSet) -> Result<Hypothesis> {
    hyps.hypotheses
        .iter()
        .min_by(|a, b| rank(a, b))
        .cloned()
        .ok_or(Error::Empty("hypothesis set"))
}
