//! Program- and trace-level metrics.

mod bleu;
mod distance;
mod edits;
mod stats;
mod trace;

pub use bleu::{bleu, bleu_multi, bleu_tokens, self_bleu, MAX_ORDER};
pub use distance::{backtracking_ratio, edit_distance};
pub use edits::{classify_edit, EditType, SMALL_EDIT_LINES};
pub use stats::{color_similarity, cosine, mean, pearson, pearson_or_zero, sem};
pub use trace::{record_metrics, trace_metrics, FeatureMeans, TraceMetrics};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("need at least two samples, got {0}")]
    TooFewSamples(usize),
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("correlation is undefined for a constant series")]
    UndefinedCorrelation,
    #[error("programs are identical")]
    IdenticalPrograms,
}
