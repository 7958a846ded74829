//! A small line-oriented turtle-graphics language.
//!
//! Programs are parsed one instruction per source line, executed by a
//! deterministic step-budgeted interpreter, and summarized into
//! [`CodeFeatures`] for the metric and probing layers. Parsing is total:
//! anything that does not fit the grammar becomes [`InstructionKind::Unknown`]
//! and only fails once it is executed.

mod analyze;
mod exec;
pub mod lexicon;
mod parse;

pub use analyze::{analyze, Analyzer, CodeFeatures, DEFAULT_KEYWORDS};
pub use exec::{execute, ExecError, ExecutionResult, DEFAULT_STEP_BUDGET};
pub use lexicon::{color_index, is_color, COLORS};
pub use parse::{parse, tokenize_line, Arg, Instruction, InstructionKind, LineToken, Program};
