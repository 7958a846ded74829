//! Tokenizer, decoder-only transformer with a student soft token, training,
//! sampling and representation extraction.

mod checkpoint;
mod config;
mod embedder;
mod generate;
mod gradcheck;
mod linalg;
mod lm;
mod optim;
mod tokenizer;
mod train;
mod transformer;

pub use checkpoint::Checkpoint;
pub use config::{FinetuneConfig, ModelConfig};
pub use embedder::{StudentEmbedder, UNKNOWN_ROW};
pub use generate::{greedy, nucleus, parse_generation, sample, Generation, ParsedGeneration, MAX_ROUNDS, TOP_P};
pub use gradcheck::{GradientCheck, CHECK_FLOOR, CHECK_STEP};
pub use lm::LanguageModel;
pub use tokenizer::{Tokenizer, EOS_ID, FIRST_MERGE, MASK_ID, SPECIALS, START_ID, UNK_TOKEN, URL_TOKEN};
pub use train::{finetune_students, train, train_with, EvalPoint, TrainingMetadata, MAX_FINETUNE_TRACES};
pub use transformer::{Decoder, Layout};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged at step {step}: loss {loss}")]
    Divergence { step: usize, loss: f64 },
    #[error("prompt has {tokens} tokens but the context holds {context}")]
    PrefixTooLong { tokens: usize, context: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
