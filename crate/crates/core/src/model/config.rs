use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub width: usize,
    /// Maximum token count per sequence; the soft token adds one position.
    pub context: usize,
    /// Tokenizer size including specials and the 256 byte tokens.
    pub vocab_size: usize,
    pub embedder_hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Optimizer steps between validation passes.
    pub eval_every: usize,
    /// Validation passes without improvement before stopping.
    pub patience: usize,
    pub validation_fraction: f64,
    /// Probability of training an example under the UNKNOWN student.
    pub unknown_dropout: f64,
    /// Tokens shared by consecutive chunks of a long sequence.
    pub chunk_overlap: usize,
    pub grad_clip: f64,
    pub warmup_steps: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Four layers, four heads, width 128, 512-token context.
    pub fn desk() -> Self {
        Self {
            layers: 4,
            heads: 4,
            width: 128,
            context: 512,
            vocab_size: 1024,
            embedder_hidden: 64,
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 3,
            eval_every: 200,
            patience: 20,
            validation_fraction: 0.02,
            unknown_dropout: 0.05,
            chunk_overlap: 64,
            grad_clip: 1.0,
            warmup_steps: 0,
        }
    }

    /// Two layers of width 16 for numerical checks.
    pub fn tiny() -> Self {
        Self {
            layers: 2,
            heads: 2,
            width: 16,
            context: 64,
            vocab_size: 300,
            embedder_hidden: 8,
            batch_size: 4,
            eval_every: 50,
            chunk_overlap: 8,
            ..Self::desk()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.layers == 0 || self.heads == 0 || self.width == 0 {
            return fail("layers, heads and width must be positive");
        }
        if !self.width.is_multiple_of(self.heads) {
            return fail("width must be divisible by heads");
        }
        if self.context < 64 {
            return fail("context must be at least 64");
        }
        if self.chunk_overlap >= self.context {
            return fail("chunk overlap must be smaller than the context");
        }
        if self.vocab_size < super::tokenizer::FIRST_MERGE as usize {
            return fail("vocab size must cover the specials and byte tokens");
        }
        if self.batch_size == 0 || self.embedder_hidden == 0 {
            return fail("batch size and embedder width must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return fail("learning rate must be positive");
        }
        Ok(())
    }
}

/// Settings for adapting student embeddings to new students.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
        }
    }
}
