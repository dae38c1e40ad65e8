//! Prediction rejection curves and the prediction rejection ratio.
//!
//! After rejecting the `j` highest-ranked samples, the curve reports the
//! number of errors still retained divided by the full sample count `N`.
//! With this normalization a random ordering has expected curve equal to the
//! straight line from the base error rate to 0, and the oracle and
//! anti-oracle areas are exact mirror images about it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectionOrder {
    /// Reject the highest scores first (scores are uncertainties).
    UncertaintyDescending,
    /// Reject the lowest scores first (scores are confidences).
    ConfidenceAscending,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RejectionCurve {
    /// `j / N` for `j = 0..=N`.
    pub rejected: Vec<f64>,
    /// Retained errors over `N` at each rejected fraction.
    pub retained_error: Vec<f64>,
    pub base_error: f64,
    pub n: usize,
    pub wrong: usize,
}

impl RejectionCurve {
    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.rejected.iter().copied().zip(self.retained_error.iter().copied())
    }
}

/// Indices in rejection order; ties keep input order.
pub fn rejection_order(scores: &[f64], order: RejectionOrder) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    match order {
        RejectionOrder::UncertaintyDescending => idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a])),
        RejectionOrder::ConfidenceAscending => idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b])),
    }
    idx
}

pub fn rejection_curve(scores: &[f64], wrong: &[bool], order: RejectionOrder) -> Result<RejectionCurve> {
    if scores.len() != wrong.len() {
        return Err(Error::invalid(format!(
            "{} scores for {} outcomes",
            scores.len(),
            wrong.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::Empty("rejection sample"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("NaN score"));
    }
    let n = scores.len();
    let total_wrong = wrong.iter().filter(|w| **w).count();
    let mut retained = total_wrong;
    let mut rejected = Vec::with_capacity(n + 1);
    let mut errors = Vec::with_capacity(n + 1);
    rejected.push(0.0);
    errors.push(retained as f64 / n as f64);
    for (j, i) in rejection_order(scores, order).into_iter().enumerate() {
        retained -= usize::from(wrong[i]);
        rejected.push((j + 1) as f64 / n as f64);
        errors.push(retained as f64 / n as f64);
    }
    Ok(RejectionCurve {
        rejected,
        retained_error: errors,
        base_error: total_wrong as f64 / n as f64,
        n,
        wrong: total_wrong,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "value", rename_all = "kebab-case")]
pub enum PrrOutcome {
    Ratio(f64),
    /// Nothing to reject: the ratio is undefined.
    NoErrors,
    /// Every prediction is wrong: the oracle equals the random line.
    AllErrors,
}

impl PrrOutcome {
    pub fn value(self) -> Option<f64> {
        match self {
            PrrOutcome::Ratio(v) => Some(v),
            _ => None,
        }
    }
}

impl std::fmt::Display for PrrOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PrrOutcome::Ratio(v) => write!(f, "{v:.6}"),
            PrrOutcome::NoErrors => f.write_str("no-errors"),
            PrrOutcome::AllErrors => f.write_str("all-errors"),
        }
    }
}

pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

/// `AR_r / AR_orc`, both areas measured between a curve and the random line.
pub fn prr(curve: &RejectionCurve) -> PrrOutcome {
    if curve.wrong == 0 {
        return PrrOutcome::NoErrors;
    }
    if curve.wrong == curve.n {
        return PrrOutcome::AllErrors;
    }
    let n = curve.n as f64;
    let random: Vec<f64> = curve.rejected.iter().map(|r| curve.base_error * (1.0 - r)).collect();
    let oracle: Vec<f64> = (0..=curve.n)
        .map(|j| curve.wrong.saturating_sub(j) as f64 / n)
        .collect();
    let a_random = trapezoid(&curve.rejected, &random);
    let ar = a_random - trapezoid(&curve.rejected, &curve.retained_error);
    let ar_orc = a_random - trapezoid(&curve.rejected, &oracle);
    PrrOutcome::Ratio(ar / ar_orc)
}

pub fn prr_of_scores(scores: &[f64], wrong: &[bool], order: RejectionOrder) -> Result<PrrOutcome> {
    Ok(prr(&rejection_curve(scores, wrong, order)?))
}
