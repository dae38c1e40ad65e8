//! Synthetic sequence-recognition task: symbol strings rendered as runs of
//! noisy prototype frames, plus labeled/unlabeled splitting and dataset files.

mod generate;
mod io;
mod split;

pub use generate::{analytic_error_rate, generate, generate_range, nearest_embedding_decode, SynthConfig};
pub use io::{load, save, Dataset, Record, FORMAT_NAME, FORMAT_VERSION};
pub use split::{split, DatasetSplit, HeldOutLabels, UnlabeledSample};
