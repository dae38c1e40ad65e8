//! Threshold selection of pseudo-labels and the self-training loop.

mod score;
mod select;
mod selftrain;

pub use score::{evaluate_model, predict, score_all, score_sample, ScoredSample, ScoringConfig};
pub use select::{select, SelectionMask};
pub use selftrain::{
    no_hook, pseudo_label_round, self_train, self_train_from, train_baseline, Baseline, PseudoEntry, RoundArtifacts,
    RoundHook, RoundRecord, RoundSelection, SelfTrainConfig, SelfTrainOutcome,
};
