//! Inverted dropout with explicit, reusable masks.
//!
//! A mask is sampled once and can then be applied to any number of inputs, so
//! a fixed set of `K` masks defines a fixed virtual ensemble.

use serde::{Deserialize, Serialize};

use super::rng::Rng;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropoutMask {
    keep: Vec<bool>,
    p: f64,
}

impl DropoutMask {
    /// All-keep mask; applying it is the identity.
    pub fn identity(units: usize) -> Self {
        Self {
            keep: vec![true; units],
            p: 0.0,
        }
    }

    pub fn from_keep(keep: Vec<bool>, p: f64) -> Result<Self> {
        check_probability(p)?;
        if p == 0.0 && keep.iter().any(|k| !k) {
            return Err(Error::invalid("a mask with p = 0 must keep every unit"));
        }
        Ok(Self { keep, p })
    }

    pub fn sample(p: f64, units: usize, rng: &mut Rng) -> Result<Self> {
        check_probability(p)?;
        let keep = if p == 0.0 {
            vec![true; units]
        } else {
            (0..units).map(|_| rng.uniform() >= p).collect()
        };
        Ok(Self { keep, p })
    }

    pub fn units(&self) -> usize {
        self.keep.len()
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn scale(&self) -> f64 {
        1.0 / (1.0 - self.p)
    }

    pub fn kept_fraction(&self) -> f64 {
        if self.keep.is_empty() {
            return 1.0;
        }
        self.keep.iter().filter(|k| **k).count() as f64 / self.keep.len() as f64
    }

    /// Per-unit multipliers: `0` for dropped units, `1/(1-p)` for kept ones.
    pub fn multipliers(&self) -> Vec<f64> {
        let s = self.scale();
        self.keep.iter().map(|&k| if k { s } else { 0.0 }).collect()
    }
}

fn check_probability(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::invalid(format!("dropout probability {p} outside [0, 1)")));
    }
    Ok(())
}

/// Samples `k` masks over `units` units. The caller holds on to them for the
/// whole scoring round.
pub fn sample_masks(p: f64, k: usize, units: usize, rng: &mut Rng) -> Result<Vec<DropoutMask>> {
    check_probability(p)?;
    if k == 0 {
        return Err(Error::invalid("ensemble size must be at least 1"));
    }
    (0..k).map(|_| DropoutMask::sample(p, units, rng)).collect()
}

pub fn apply_dropout(x: &[f64], mask: &DropoutMask) -> Result<Vec<f64>> {
    if x.len() != mask.units() {
        return Err(Error::ShapeMismatch {
            op: "apply_dropout",
            left: (1, x.len()),
            right: (1, mask.units()),
        });
    }
    if mask.p == 0.0 {
        return Ok(x.to_vec());
    }
    let s = mask.scale();
    Ok(x.iter()
        .zip(&mask.keep)
        .map(|(&v, &k)| if k { v * s } else { 0.0 })
        .collect())
}
