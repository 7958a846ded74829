use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracelab_core::corpus::{SplitLabel, HEADER_BUDGET, TITLE_MASK_RATE};
use tracelab_core::model::{FinetuneConfig, ModelConfig, MAX_FINETUNE_TRACES, TOP_P};
use tracelab_core::probes::MlpProbeConfig;

use crate::LabError;

/// The model variants, each trained on its own view of the training split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Trace,
    Last,
    Synthetic,
    TraceDownsampled,
    SyntheticDownsampled,
    SyntheticComplex,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Trace,
        Variant::Last,
        Variant::Synthetic,
        Variant::TraceDownsampled,
        Variant::SyntheticDownsampled,
        Variant::SyntheticComplex,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Trace => "trace",
            Variant::Last => "last",
            Variant::Synthetic => "synthetic",
            Variant::TraceDownsampled => "trace-downsampled",
            Variant::SyntheticDownsampled => "synthetic-downsampled",
            Variant::SyntheticComplex => "synthetic-complex",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| LabError::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub students: usize,
    pub titles: usize,
    /// Inclusive range of traces per student.
    pub min_traces: usize,
    pub max_traces: usize,
    pub header_budget: usize,
    pub title_mask_rate: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            students: 200,
            titles: 60,
            min_traces: 20,
            max_traces: 40,
            header_budget: HEADER_BUDGET,
            title_mask_rate: TITLE_MASK_RATE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub variants: Vec<Variant>,
    pub splits: Vec<SplitLabel>,
    pub titles_per_split: usize,
    pub students_per_title: usize,
    pub n_samples: usize,
    pub top_p: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            variants: vec![
                Variant::Trace,
                Variant::Last,
                Variant::Synthetic,
                Variant::TraceDownsampled,
                Variant::SyntheticDownsampled,
            ],
            splits: vec![
                SplitLabel::SeenSeen,
                SplitLabel::SeenUnseen,
                SplitLabel::UnseenSeen,
                SplitLabel::UnseenUnseen,
            ],
            titles_per_split: 20,
            students_per_title: 10,
            n_samples: 10,
            top_p: TOP_P,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeRunConfig {
    pub variants: Vec<Variant>,
    pub code_targets: Vec<String>,
    pub student_metrics: Vec<String>,
    /// Students qualify with this many training traces, inclusive.
    pub min_traces: usize,
    pub max_traces: usize,
    pub max_students: usize,
    /// Training traces whose prefixes feed the code probes.
    pub code_records: usize,
    pub shallow: MlpProbeConfig,
    /// Traces whose prefixes feed the CKA and PCA analyses; 0 skips them.
    pub analysis_records: usize,
    pub pca_components: usize,
}

impl Default for ProbeRunConfig {
    fn default() -> Self {
        Self {
            variants: vec![Variant::Trace, Variant::Last],
            code_targets: [
                "title",
                "is-final",
                "halfway",
                "will-backtrack",
                "future-attempts",
                "future-seconds",
                "edit-distance-to-final",
                "final-executes",
            ]
            .map(String::from)
            .to_vec(),
            student_metrics: [
                "comments",
                "backtracking-ratio",
                "attempts",
                "duration-seconds",
                "lines",
                "colors",
                "final-execution",
                "year",
            ]
            .map(String::from)
            .to_vec(),
            min_traces: 20,
            max_traces: 200,
            max_students: 2000,
            code_records: 200,
            shallow: MlpProbeConfig::default(),
            analysis_records: 100,
            pca_components: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptConfig {
    /// Freshly simulated students never seen in training.
    pub students: usize,
    pub min_traces: usize,
    pub max_traces: usize,
    pub ks: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Share of students used only to choose the epoch count.
    pub selection_fraction: f64,
    /// Held-out traces scored per student.
    pub eval_traces: usize,
    pub n_samples: usize,
    pub top_p: f64,
    pub finetune: FinetuneConfig,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            students: 60,
            min_traces: 20,
            max_traces: 40,
            ks: (1..=MAX_FINETUNE_TRACES).collect(),
            seeds: vec![0, 1, 2],
            selection_fraction: 0.05,
            eval_traces: 5,
            n_samples: 4,
            top_p: TOP_P,
            finetune: FinetuneConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoveryConfig {
    pub variants: Vec<Variant>,
    /// Seconds added to the failing state's time for the next header.
    pub time_grid: Vec<f64>,
    /// The strong student needs more than this many training traces.
    pub strong_min_traces: usize,
    pub max_states: usize,
    pub n_samples: usize,
    pub top_p: f64,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self {
            variants: vec![Variant::Trace, Variant::Synthetic, Variant::SyntheticComplex],
            time_grid: vec![0.5, 1.0, 5.0, 60.0, 6400.0],
            strong_min_traces: 20,
            max_states: 100,
            n_samples: 4,
            top_p: TOP_P,
        }
    }
}

/// Everything an experiment run depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub models: BTreeMap<Variant, ModelConfig>,
    pub eval: EvalConfig,
    pub probes: ProbeRunConfig,
    pub adaptation: AdaptConfig,
    pub recovery: RecoveryConfig,
}

/// Two layers of width 64 over a 256-token context.
pub fn desk_model() -> ModelConfig {
    ModelConfig {
        layers: 2,
        heads: 4,
        width: 64,
        context: 256,
        vocab_size: 512,
        embedder_hidden: 32,
        learning_rate: 3e-3,
        batch_size: 16,
        max_epochs: 3,
        eval_every: 100,
        patience: 10,
        chunk_overlap: 32,
        warmup_steps: 50,
        ..ModelConfig::desk()
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            corpus: CorpusConfig::default(),
            models: Variant::ALL.into_iter().map(|v| (v, desk_model())).collect(),
            eval: EvalConfig::default(),
            probes: ProbeRunConfig::default(),
            adaptation: AdaptConfig::default(),
            recovery: RecoveryConfig::default(),
        }
    }
}

fn merge(base: &mut toml::Table, overrides: toml::Table, path: &str) -> Result<(), LabError> {
    for (key, value) in overrides {
        let name = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
        match (base.get_mut(&key), value) {
            (None, _) => return Err(LabError::Config(format!("unknown key `{name}`"))),
            (Some(toml::Value::Table(inner)), toml::Value::Table(value)) => merge(inner, value, &name)?,
            (Some(slot), value) => *slot = value,
        }
    }
    Ok(())
}

impl ExperimentConfig {
    /// Defaults overridden by a TOML document of (possibly dotted) keys.
    pub fn from_toml(text: &str) -> Result<Self, LabError> {
        let overrides: toml::Table = text.parse().map_err(|e| LabError::Config(format!("{e}")))?;
        let mut base = toml::Table::try_from(Self::default()).map_err(|e| LabError::Config(e.to_string()))?;
        merge(&mut base, overrides, "")?;
        let config: Self = base.try_into().map_err(|e: toml::de::Error| LabError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LabError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String, LabError> {
        toml::to_string(self).map_err(|e| LabError::Config(e.to_string()))
    }

    /// Short hex digest of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn model(&self, variant: Variant) -> Result<&ModelConfig, LabError> {
        self.models.get(&variant).ok_or_else(|| LabError::Config(format!("no model config for `{variant}`")))
    }

    /// A seed for one named purpose, stable under the master seed.
    pub fn derived_seed(&self, purpose: &str) -> u64 {
        derive_seed(self.seed, purpose)
    }

    pub fn validate(&self) -> Result<(), LabError> {
        let fail = |m: String| Err(LabError::Config(m));
        let referenced = self
            .eval
            .variants
            .iter()
            .chain(&self.probes.variants)
            .chain(&self.recovery.variants)
            .chain(std::iter::once(&Variant::Trace));
        for v in referenced {
            self.model(*v)?.validate()?;
        }
        let c = &self.corpus;
        if c.min_traces == 0 || c.min_traces > c.max_traces {
            return fail(format!("corpus trace range [{}, {}] is invalid", c.min_traces, c.max_traces));
        }
        if !(0.0..=1.0).contains(&c.title_mask_rate) {
            return fail("title mask rate must be a probability".into());
        }
        if self.eval.n_samples == 0 || self.adaptation.n_samples == 0 || self.recovery.n_samples == 0 {
            return fail("sample counts must be positive".into());
        }
        for p in [self.eval.top_p, self.adaptation.top_p, self.recovery.top_p] {
            if !(p > 0.0 && p <= 1.0) {
                return fail(format!("nucleus mass {p} is outside (0, 1]"));
            }
        }
        if self.eval.splits.contains(&SplitLabel::Train) {
            return fail("behavioral evaluation cannot use the train split".into());
        }
        let a = &self.adaptation;
        if let Some(k) = a.ks.iter().find(|k| !(1..=MAX_FINETUNE_TRACES).contains(*k)) {
            return fail(format!("k = {k} is outside 1..={MAX_FINETUNE_TRACES}"));
        }
        if a.seeds.is_empty() || a.min_traces > a.max_traces {
            return fail("adaptation needs seeds and a valid trace range".into());
        }
        if !(0.0..1.0).contains(&a.selection_fraction) {
            return fail("selection fraction must be in [0, 1)".into());
        }
        if self.recovery.time_grid.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return fail("time offsets must be finite and nonnegative".into());
        }
        Ok(())
    }
}

pub fn derive_seed(seed: u64, purpose: &str) -> u64 {
    let digest = Sha256::digest(format!("{seed}:{purpose}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("eight bytes"))
}
