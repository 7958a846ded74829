//! Probes on learned representations, with shuffled controls, CKA and PCA.

mod analysis;
mod datasets;
mod mlp;
mod report;
mod ridge;

pub use analysis::{cka, pca, pca_edit_deltas, EditPca, Pca};
pub use datasets::{
    build_code_probe_dataset, build_student_probe_dataset, code_probe_dataset, embed_prefixes, permute_inputs,
    shuffle_embeddings, shuffled_student_ids, CodeTarget, PrefixEmbeddings, StudentMetric,
};
pub use mlp::{MlpProbe, MlpProbeConfig};
pub use report::{
    fit_linear_probe, fit_shallow_probe, macro_f1, paired_test, PairedTest, ProbeReport, N_SPLITS, TEST_FRACTION,
};
pub use ridge::{RidgeFit, ALPHAS};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("probe dataset has {0} examples, too few to fit")]
    TooFewExamples(usize),
    #[error("targets are degenerate: {0}")]
    DegenerateTargets(String),
    #[error("malformed probe dataset: {0}")]
    Malformed(String),
    #[error("no examples left after filtering")]
    EmptyAfterFiltering,
    #[error("input has zero variance")]
    ZeroVariance,
    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeTask {
    Regression,
    /// Targets are class indices stored as `f64`.
    Classification,
}

/// Inputs paired with targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeDataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub task: ProbeTask,
    /// What produced the inputs and targets.
    pub provenance: String,
    /// Class names for classification targets.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub classes: Vec<String>,
}

impl ProbeDataset {
    pub fn new(
        inputs: Vec<Vec<f64>>,
        targets: Vec<f64>,
        task: ProbeTask,
        provenance: impl Into<String>,
    ) -> Result<Self, ProbeError> {
        if inputs.len() != targets.len() {
            return Err(ProbeError::Malformed(format!("{} inputs but {} targets", inputs.len(), targets.len())));
        }
        if let Some(first) = inputs.first() {
            if inputs.iter().any(|x| x.len() != first.len()) {
                return Err(ProbeError::Malformed("inputs differ in dimension".into()));
            }
        }
        if inputs.iter().flatten().chain(&targets).any(|v| !v.is_finite()) {
            return Err(ProbeError::Malformed("non-finite entry".into()));
        }
        if task == ProbeTask::Classification && targets.iter().any(|t| t.fract() != 0.0 || *t < 0.0) {
            return Err(ProbeError::Malformed("class targets must be nonnegative integers".into()));
        }
        Ok(Self { inputs, targets, task, provenance: provenance.into(), classes: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub(crate) fn n_classes(&self) -> usize {
        self.targets.iter().map(|t| *t as usize + 1).max().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(ProbeDataset::new(vec![vec![1.0]], vec![], ProbeTask::Regression, "").is_err());
        assert!(ProbeDataset::new(vec![vec![f64::NAN]], vec![1.0], ProbeTask::Regression, "").is_err());
        assert!(ProbeDataset::new(vec![vec![1.0]], vec![0.5], ProbeTask::Classification, "").is_err());
        let d = ProbeDataset::new(vec![vec![1.0, 2.0]], vec![2.0], ProbeTask::Classification, "x").unwrap();
        assert_eq!((d.len(), d.dim(), d.n_classes()), (1, 2, 3));
    }
}
