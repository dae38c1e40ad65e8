//! Uncertainty-aware pseudo-label selection for sequence recognition.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod cli;
pub mod decode;
pub mod diagnostics;
mod error;
pub mod metrics;
pub mod numkit;
pub mod pseudolabel;
pub mod recognizer;
pub mod synthdata;
pub mod uncertainty;

pub use error::{Error, Result};
