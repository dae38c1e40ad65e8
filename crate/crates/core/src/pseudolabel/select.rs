use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `q_i = 1` iff sample `i` joins the training set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionMask(Vec<bool>);

impl SelectionMask {
    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|q| **q).count()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, q)| **q).map(|(i, _)| i)
    }
}

/// Selects every sample with uncertainty at or below `tau`. `tau = +∞`
/// selects everything.
pub fn select(uncertainties: &[f64], tau: f64) -> Result<SelectionMask> {
    if !(tau >= 0.0) {
        return Err(Error::invalid(format!("threshold {tau} must be >= 0")));
    }
    if let Some(u) = uncertainties.iter().find(|u| u.is_nan()) {
        return Err(Error::invalid(format!("uncertainty {u} is not a number")));
    }
    Ok(SelectionMask(uncertainties.iter().map(|&u| u <= tau).collect()))
}
