//! Experiment orchestration on top of `tracelab-core`: configuration, the
//! shared corpus and model lab, the four experiment families and a result
//! table they all append to.

pub mod adaptation;
pub mod behavioral;
pub mod config;
pub mod lab;
pub mod probing;
pub mod recovery;
pub mod results;

pub use config::{ExperimentConfig, Variant};
pub use lab::Lab;
pub use results::{ResultRow, ResultTable};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("no checkpoint for variant `{0}`; train it first")]
    MissingCheckpoint(Variant),
    #[error("no student has enough traces: {0}")]
    NoQualifyingStudents(String),
    #[error("no failing program states to repair")]
    NoFailingStates,
    #[error("no training student has more than {0} traces")]
    NoStrongStudent(usize),
    #[error(transparent)]
    Core(#[from] tracelab_core::Error),
    #[error(transparent)]
    Corpus(#[from] tracelab_core::corpus::CorpusError),
    #[error(transparent)]
    Model(#[from] tracelab_core::model::ModelError),
    #[error(transparent)]
    Metrics(#[from] tracelab_core::metrics::MetricsError),
    #[error(transparent)]
    Probe(#[from] tracelab_core::probes::ProbeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
