use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    /// Mean confidence of the bin's members; 0 when empty.
    pub confidence: f64,
    /// Fraction of correct members; 0 when empty.
    pub accuracy: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub bins: Vec<CalibrationBin>,
    pub ece: f64,
}

impl CalibrationReport {
    pub fn count(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }
}

/// Expected calibration error over `bins` equal-width bins on [0, 1]. A
/// confidence of exactly 1 falls in the last bin.
pub fn ece(confidences: &[f64], correct: &[bool], bins: usize) -> Result<CalibrationReport> {
    if confidences.len() != correct.len() {
        return Err(Error::invalid(format!(
            "{} confidences for {} outcomes",
            confidences.len(),
            correct.len()
        )));
    }
    if bins == 0 {
        return Err(Error::invalid("bin count must be >= 1"));
    }
    if confidences.is_empty() {
        return Err(Error::Empty("calibration sample"));
    }
    let mut sum_conf = vec![0.0; bins];
    let mut hits = vec![0usize; bins];
    let mut counts = vec![0usize; bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::invalid(format!("confidence {c} outside [0, 1]")));
        }
        let b = ((c * bins as f64) as usize).min(bins - 1);
        sum_conf[b] += c;
        hits[b] += usize::from(ok);
        counts[b] += 1;
    }
    let n = confidences.len() as f64;
    let mut ece = 0.0;
    let mut out = Vec::with_capacity(bins);
    for b in 0..bins {
        let (confidence, accuracy) = if counts[b] == 0 {
            (0.0, 0.0)
        } else {
            (sum_conf[b] / counts[b] as f64, hits[b] as f64 / counts[b] as f64)
        };
        ece += counts[b] as f64 / n * (accuracy - confidence).abs();
        out.push(CalibrationBin {
            lower: b as f64 / bins as f64,
            upper: (b + 1) as f64 / bins as f64,
            confidence,
            accuracy,
            count: counts[b],
        });
    }
    Ok(CalibrationReport { bins: out, ece })
}
