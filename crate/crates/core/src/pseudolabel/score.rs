//! Per-sample analysis shared by pseudo-labeling, evaluation and the
//! rejection/calibration reports.

use serde::{Deserialize, Serialize};

use crate::decode::{assign_pseudo_label, beam_search_encoded, Hypothesis, HypothesisSet};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalReport};
use crate::recognizer::{FeatureSequence, LabeledSample, Model, ModelParams};
use crate::uncertainty::{ensemble_confidence, total_uncertainty_encoded, EnsembleSpec, UncertaintyReport};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub beam_width: usize,
    pub temperature: f64,
    pub s_max: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub id: u64,
    pub hypotheses: HypothesisSet,
    pub prediction: Hypothesis,
    pub uncertainty: UncertaintyReport,
    /// `exp(ln P(prediction))` under the deterministic model.
    pub confidence: f64,
    /// `(1/K) Σ_k P(prediction | θᵏ)`.
    pub ensemble_confidence: f64,
}

/// Beam search, pseudo-label assignment and ensemble scoring of one input.
pub fn score_sample(
    model: &Model,
    id: u64,
    features: &FeatureSequence,
    scoring: &ScoringConfig,
    ens: &EnsembleSpec,
) -> Result<ScoredSample> {
    let enc = model.encode(features, None)?;
    let hypotheses = beam_search_encoded(model, &enc, scoring.beam_width, scoring.s_max)?;
    let prediction = assign_pseudo_label(&hypotheses)?;
    let members = ens.member_encodings(model, &enc)?;
    let uncertainty = total_uncertainty_encoded(model, &members, &hypotheses, scoring.temperature)?;
    let ensemble_confidence = ensemble_confidence(model, &members, &prediction.tokens)?;
    Ok(ScoredSample {
        id,
        confidence: prediction.log_prob.exp(),
        ensemble_confidence,
        hypotheses,
        prediction,
        uncertainty,
    })
}

pub fn score_all<'a, I>(
    params: &ModelParams,
    inputs: I,
    scoring: &ScoringConfig,
    ens: &EnsembleSpec,
) -> Result<Vec<ScoredSample>>
where
    I: IntoIterator<Item = (u64, &'a FeatureSequence)>,
{
    let model = Model::new(params);
    inputs
        .into_iter()
        .map(|(id, v)| score_sample(&model, id, v, scoring, ens))
        .collect()
}

/// Top beam-search hypothesis for each sample.
pub fn predict(
    params: &ModelParams,
    samples: &[LabeledSample],
    beam_width: usize,
    s_max: usize,
) -> Result<Vec<Hypothesis>> {
    let model = Model::new(params);
    samples
        .iter()
        .map(|s| {
            let enc = model.encode(&s.features, None)?;
            assign_pseudo_label(&beam_search_encoded(&model, &enc, beam_width, s_max)?)
        })
        .collect()
}

/// Word accuracy / WER / CER of deterministic predictions against labels.
pub fn evaluate_model(params: &ModelParams, samples: &[LabeledSample], beam_width: usize) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let preds = predict(params, samples, beam_width, params.dims.max_len)?;
    let pred_syms: Vec<&[usize]> = preds.iter().map(|h| h.symbols()).collect();
    let ref_syms: Vec<&[usize]> = samples.iter().map(|s| strip_eos(&s.label)).collect();
    evaluate(&pred_syms, &ref_syms)
}

pub(crate) fn strip_eos(tokens: &[usize]) -> &[usize] {
    match tokens.last() {
        Some(&crate::recognizer::EOS) => &tokens[..tokens.len() - 1],
        _ => tokens,
    }
}
