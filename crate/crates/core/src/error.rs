use thiserror::Error;

use crate::corpus::CorpusError;
use crate::metrics::MetricsError;
use crate::model::ModelError;
use crate::probes::ProbeError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
