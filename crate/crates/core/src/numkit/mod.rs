//! Numeric kernel: dense matrices, reverse-mode differentiation, seeded
//! randomness and dropout masks.

mod backend;
mod dropout;
mod matrix;
mod rng;
mod tape;

pub use backend::{Backend, Eager};
pub use dropout::{apply_dropout, sample_masks, DropoutMask};
pub use matrix::{log_sum_exp, softmax, Matrix};
pub use rng::{derive_seed, Rng};
pub use tape::{backward, Gradients, NodeId, Op, Tape, TapeNode};

pub(crate) use tape::log_prob_at;
