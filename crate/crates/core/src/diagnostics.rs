//! Held-out analyses built from scored samples: rejection curves for both
//! scores, calibration under an ensemble, ECE of uncertainty-ranked subsets
//! and threshold sweeps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{ece, prr, rejection_curve, PrrOutcome, RejectionCurve, RejectionOrder};
use crate::pseudolabel::{score_all, ScoredSample, ScoringConfig};
use crate::recognizer::{LabeledSample, ModelParams};
use crate::uncertainty::EnsembleSpec;

pub const DEFAULT_BINS: usize = 10;

/// Exact sequence match of each prediction against its reference tokens.
pub fn correctness(scored: &[ScoredSample], labels: &[&[usize]]) -> Result<Vec<bool>> {
    if scored.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            scored.len(),
            labels.len()
        )));
    }
    Ok(scored
        .iter()
        .zip(labels)
        .map(|(s, l)| s.prediction.tokens == *l)
        .collect())
}

pub fn score_labeled(
    params: &ModelParams,
    samples: &[LabeledSample],
    scoring: &ScoringConfig,
    ens: &EnsembleSpec,
) -> Result<(Vec<ScoredSample>, Vec<bool>)> {
    if samples.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let scored = score_all(params, samples.iter().map(|s| (s.id, &s.features)), scoring, ens)?;
    let labels: Vec<&[usize]> = samples.iter().map(|s| s.label.as_slice()).collect();
    let correct = correctness(&scored, &labels)?;
    Ok((scored, correct))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    Uncertainty,
    Confidence,
}

impl Measure {
    pub fn name(self) -> &'static str {
        match self {
            Measure::Uncertainty => "uncertainty",
            Measure::Confidence => "confidence",
        }
    }

    pub fn order(self) -> RejectionOrder {
        match self {
            Measure::Uncertainty => RejectionOrder::UncertaintyDescending,
            Measure::Confidence => RejectionOrder::ConfidenceAscending,
        }
    }

    /// Total uncertainty, or deterministic `exp(ln P(top))`.
    pub fn scores(self, scored: &[ScoredSample]) -> Vec<f64> {
        scored
            .iter()
            .map(|s| match self {
                Measure::Uncertainty => s.uncertainty.total,
                Measure::Confidence => s.confidence,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RejectionResult {
    pub measure: Measure,
    pub curve: RejectionCurve,
    pub prr: PrrOutcome,
}

pub fn rejection(scored: &[ScoredSample], correct: &[bool], measure: Measure) -> Result<RejectionResult> {
    let wrong: Vec<bool> = correct.iter().map(|c| !c).collect();
    let curve = rejection_curve(&measure.scores(scored), &wrong, measure.order())?;
    Ok(RejectionResult {
        measure,
        prr: prr(&curve),
        curve,
    })
}

/// Indices of the `fraction` of samples with the lowest uncertainty (ties by
/// position).
pub fn lowest_uncertainty(scored: &[ScoredSample], fraction: f64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("subset fraction {fraction} outside (0, 1]")));
    }
    let mut idx: Vec<usize> = (0..scored.len()).collect();
    idx.sort_by(|&a, &b| scored[a].uncertainty.total.total_cmp(&scored[b].uncertainty.total));
    let keep = ((fraction * scored.len() as f64).round() as usize)
        .max(1)
        .min(scored.len());
    idx.truncate(keep);
    Ok(idx)
}

/// ECE of deterministic confidences over the lowest-uncertainty `fraction`.
pub fn subset_ece(scored: &[ScoredSample], correct: &[bool], fraction: f64, bins: usize) -> Result<f64> {
    let idx = lowest_uncertainty(scored, fraction)?;
    let conf: Vec<f64> = idx.iter().map(|&i| scored[i].confidence).collect();
    let ok: Vec<bool> = idx.iter().map(|&i| correct[i]).collect();
    Ok(ece(&conf, &ok, bins)?.ece)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub p: f64,
    pub k: usize,
    /// ECE of ensemble-mean confidences of the top hypothesis.
    pub ece: f64,
    /// `(fraction, ECE)` for each requested lowest-uncertainty subset.
    pub subsets: Vec<(f64, f64)>,
}

/// One row of a dropout-rate sweep. `p = 0` reduces to the deterministic model.
#[allow(clippy::too_many_arguments)]
pub fn calibration_row(
    params: &ModelParams,
    samples: &[LabeledSample],
    scoring: &ScoringConfig,
    p: f64,
    k: usize,
    seed: u64,
    fractions: &[f64],
    bins: usize,
) -> Result<CalibrationRow> {
    let ens = if p == 0.0 {
        EnsembleSpec::deterministic(params.dims.hidden)
    } else {
        EnsembleSpec::sample(p, k, params.dims.hidden, seed, 0)?
    };
    let (scored, correct) = score_labeled(params, samples, scoring, &ens)?;
    let conf: Vec<f64> = scored.iter().map(|s| s.ensemble_confidence.clamp(0.0, 1.0)).collect();
    let ece = ece(&conf, &correct, bins)?.ece;
    let subsets = fractions
        .iter()
        .map(|&f| Ok((f, subset_ece(&scored, &correct, f, bins)?)))
        .collect::<Result<_>>()?;
    Ok(CalibrationRow {
        p,
        k: ens.k(),
        ece,
        subsets,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauPoint {
    pub tau: f64,
    pub selected: usize,
    pub fraction: f64,
    /// Share of selected pseudo-labels that match the reference; `None` when
    /// nothing is selected.
    pub accuracy: Option<f64>,
}

/// Selection size and pseudo-label accuracy at each threshold.
pub fn tau_sweep(scored: &[ScoredSample], correct: &[bool], taus: &[f64]) -> Result<Vec<TauPoint>> {
    let us: Vec<f64> = scored.iter().map(|s| s.uncertainty.total).collect();
    taus.iter()
        .map(|&tau| {
            let mask = crate::pseudolabel::select(&us, tau)?;
            let selected = mask.count();
            let hits = mask.indices().filter(|&i| correct[i]).count();
            Ok(TauPoint {
                tau,
                selected,
                fraction: if us.is_empty() {
                    0.0
                } else {
                    selected as f64 / us.len() as f64
                },
                accuracy: (selected > 0).then(|| hits as f64 / selected as f64),
            })
        })
        .collect()
}
