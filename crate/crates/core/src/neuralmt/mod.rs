//! Character-level neural translation model: convolutional encoder with
//! max-pooling and highway layers, bidirectional GRU, attentional GRU decoder,
//! trained with Adam on the minimum-loss admissible target.
//!
//! Everything runs in `f64` on a single thread, so training is reproducible
//! bit for bit under a fixed seed.

mod config;
mod data;
mod gradcheck;
mod io;
mod model;
mod params;
mod train;
mod vocab;

use thiserror::Error;

pub use config::{ModelConfig, REFERENCE_FILTER_TOTAL};
pub use data::{load_parallel_corpus, parse_parallel_corpus, split_dev};
pub use gradcheck::{gradient_check, relative_error, GradCheckReport, GRADIENT_FLOOR};
pub use io::{load_model, model_from_bytes, model_to_bytes, save_model, MODEL_FORMAT_VERSION, MODEL_MAGIC};
pub use model::{softmax, EncoderStates, TranslationModel};
pub use params::{Attention, Dense, Gru, Highway, Params};
pub use train::{
    build_vocabs, exact_match_rate, mean_loss, multi_target_gradient, multi_target_loss, next_learning_rate, train, train_with, EpochLog,
    TrainOutcome, TrainState, TrainingExample,
};
pub use vocab::{CharVocab, BOS, EOS, PAD, UNK};

#[derive(Debug, Error)]
pub enum MtError {
    #[error("source text is empty")]
    EmptySource,
    #[error("target text is empty")]
    EmptyTarget,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("parameter shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("incompatible model file: {0}")]
    IncompatibleVersion(String),
    #[error("corrupt model file: {0}")]
    CorruptFile(String),
    #[error("parallel corpus line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Convenience wrapper used by callers that hold a model and a source string.
pub fn decode_greedy(model: &TranslationModel, source: &str) -> Result<String, MtError> {
    model.decode_greedy(source)
}

pub fn sequence_loss(model: &TranslationModel, source: &str, target: &str) -> Result<f64, MtError> {
    model.sequence_loss(source, target)
}

pub fn encode(model: &TranslationModel, source: &str) -> Result<EncoderStates, MtError> {
    model.encode(source)
}
