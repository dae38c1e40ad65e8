//! Attention-based sequence recognizer: bidirectional recurrent encoder,
//! additive attention and a recurrent decoder emitting one token per step.

pub mod checkpoint;
mod model;
mod params;
mod train;
mod vocab;

pub use model::{
    attention_context, decoder_step, encode, loss_on_tape, sequence_log_prob, teacher_forced_loss, DecoderState,
    Encoded, FeatureSequence, LabeledSample, Model, StepOutput,
};
pub use params::{Architecture, Dims, GruCell, ModelParams, Weights, TENSOR_COUNT};
pub use train::{clip_global_norm, loss_and_gradients, train, AdaDelta, TrainConfig, TrainReport, Trainer};
pub use vocab::{Vocabulary, BOS, EOS, FIRST_SYMBOL, PAD};
