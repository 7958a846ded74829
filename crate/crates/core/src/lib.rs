//! Core library for modeling student program-edit traces.
//!
//! The crate is organized bottom-up:
//!
//! * [`minilang`] parses, executes and analyzes programs in a small
//!   turtle-graphics language.
//! * [`corpus`] holds the trace data model, the serialization template,
//!   deduplication, chunking, splits, downsampling and PII scrubbing.
//! * [`simulator`] generates a population of students with known latent
//!   traits and the traces they write.
//! * [`editsynth`] fabricates synthetic traces from final programs.
//! * [`model`] is a from-scratch decoder-only transformer with a student
//!   soft token, plus tokenizer, training, sampling and embedding extraction.
//! * [`metrics`] computes program and trace properties, BLEU and correlations.
//! * [`probes`] fits linear and shallow probes on learned representations and
//!   provides CKA and PCA analyses.

pub mod corpus;
pub mod editsynth;
pub mod metrics;
pub mod minilang;
pub mod model;
pub mod probes;
pub mod simulator;

mod error;

pub use error::{Error, Result};
