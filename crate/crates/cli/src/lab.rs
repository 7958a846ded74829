use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use tracelab_core::corpus::{
    build_examples, dedup, downsample, last_state_view, make_splits, scrub_record, serialize, SerializeOptions,
    SerializedExample, SplitAssignment, SplitLabel, TraceRecord, DOWNSAMPLE_TOLERANCE,
};
use tracelab_core::editsynth::{synth_record, SynthKind};
use tracelab_core::model::{train_with, Checkpoint, ModelConfig, Tokenizer};
use tracelab_core::simulator::{build_corpus, make_templates, sample_population, StudentProfile, TitleTemplate};

use crate::config::{ExperimentConfig, Variant};
use crate::LabError;

/// The simulated corpus, its splits, the shared tokenizer and whatever
/// checkpoints have been trained or loaded so far.
pub struct Lab {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub templates: Vec<TitleTemplate>,
    pub population: Vec<StudentProfile>,
    /// Scrubbed and deduplicated.
    pub records: Vec<TraceRecord>,
    pub splits: SplitAssignment,
    pub tokenizer: Tokenizer,
    /// Checkpoints are cached under `<dir>/models` when set.
    pub out_dir: Option<PathBuf>,
    models: Mutex<BTreeMap<Variant, Arc<Checkpoint>>>,
    training: Mutex<()>,
}

/// Simulates a population's traces, scrubbed and deduplicated.
pub fn simulate_records(
    population: &[StudentProfile],
    templates: &[TitleTemplate],
    range: (usize, usize),
    seed: u64,
) -> Result<Vec<TraceRecord>, LabError> {
    let raw = build_corpus(population, templates, range, seed)?;
    Ok(raw.iter().filter_map(scrub_record).filter_map(|r| dedup(&r)).collect())
}

impl Lab {
    pub fn build(config: ExperimentConfig, out_dir: Option<&Path>) -> Result<Self, LabError> {
        config.validate()?;
        let c = &config.corpus;
        let templates = make_templates(c.titles, config.derived_seed("templates"));
        let population = sample_population(c.students, config.derived_seed("population"));
        let records =
            simulate_records(&population, &templates, (c.min_traces, c.max_traces), config.derived_seed("corpus"))?;
        let splits = make_splits(&records, config.derived_seed("splits"))?;
        let mut lab = Self {
            config_hash: config.hash(),
            templates,
            population,
            records,
            splits,
            tokenizer: Tokenizer::bytes_only(),
            out_dir: out_dir.map(Path::to_path_buf),
            models: Mutex::new(BTreeMap::new()),
            training: Mutex::new(()),
            config,
        };
        let trace = lab.dataset(Variant::Trace)?;
        let vocab = lab.config.model(Variant::Trace)?.vocab_size;
        lab.tokenizer = Tokenizer::train(trace.iter().map(|e| e.text.as_str()), vocab);
        info!(
            "corpus: {} records from {} students, {} train, tokenizer {} entries",
            lab.records.len(),
            lab.population.len(),
            lab.split(SplitLabel::Train).len(),
            lab.tokenizer.vocab_size()
        );
        Ok(lab)
    }

    pub fn opts(&self) -> SerializeOptions {
        SerializeOptions { header_budget: self.config.corpus.header_budget }
    }

    pub fn split(&self, label: SplitLabel) -> Vec<&TraceRecord> {
        self.splits.select(&self.records, label)
    }

    /// Training records, owned.
    pub fn train_records(&self) -> Vec<TraceRecord> {
        self.split(SplitLabel::Train).into_iter().cloned().collect()
    }

    /// Training traces per student.
    pub fn train_counts(&self) -> BTreeMap<&str, usize> {
        let mut counts = BTreeMap::new();
        for r in self.split(SplitLabel::Train) {
            *counts.entry(r.student_id.as_str()).or_insert(0) += 1;
        }
        counts
    }

    /// Synthetic counterparts of the training records.
    pub fn synthetic(&self, kind: SynthKind) -> Vec<TraceRecord> {
        let base = self.config.derived_seed(match kind {
            SynthKind::Append => "synth-append",
            SynthKind::Complex => "synth-complex",
        });
        self.split(SplitLabel::Train)
            .iter()
            .enumerate()
            .filter_map(|(i, r)| synth_record(r, kind, base.wrapping_add(i as u64)))
            .collect()
    }

    fn masked(&self, records: &[TraceRecord]) -> Vec<SerializedExample> {
        build_examples(records, self.config.corpus.title_mask_rate, self.config.derived_seed("title-mask"), &self.opts())
    }

    fn token_counts(&self, dataset: &[SerializedExample]) -> Vec<usize> {
        dataset.par_iter().map(|e| self.tokenizer.encode(&e.text).len()).collect()
    }

    fn downsampled(&self, full: Vec<SerializedExample>, variant: Variant) -> Result<Vec<SerializedExample>, LabError> {
        let reference: usize = self.token_counts(&self.dataset(Variant::Last)?).iter().sum();
        let counts = self.token_counts(&full);
        let outcome = downsample(&counts, reference, DOWNSAMPLE_TOLERANCE, self.config.derived_seed(variant.as_str()))?;
        info!(
            "{variant}: kept {} of {} examples, {} tokens against {} (within band: {})",
            outcome.kept.len(),
            full.len(),
            outcome.total_tokens,
            outcome.reference_tokens,
            outcome.within_band
        );
        Ok(outcome.kept.into_iter().map(|i| full[i].clone()).collect())
    }

    /// Training examples for a variant.
    pub fn dataset(&self, variant: Variant) -> Result<Vec<SerializedExample>, LabError> {
        let train = self.train_records();
        Ok(match variant {
            Variant::Trace => self.masked(&train),
            Variant::Last => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.config.derived_seed("title-mask"));
                let rate = self.config.corpus.title_mask_rate;
                train.iter().filter_map(|r| last_state_view(r, rng.random_bool(rate), &self.opts())).collect()
            }
            Variant::Synthetic => self.masked(&self.synthetic(SynthKind::Append)),
            Variant::SyntheticComplex => self.masked(&self.synthetic(SynthKind::Complex)),
            Variant::TraceDownsampled => self.downsampled(self.masked(&train), variant)?,
            Variant::SyntheticDownsampled => {
                self.downsampled(self.masked(&self.synthetic(SynthKind::Append)), variant)?
            }
        })
    }

    /// The model config with its vocabulary matched to the shared tokenizer.
    pub fn model_config(&self, variant: Variant) -> Result<ModelConfig, LabError> {
        let mut c = self.config.model(variant)?.clone();
        c.vocab_size = self.tokenizer.vocab_size();
        Ok(c)
    }

    /// Identifies everything a checkpoint depends on.
    pub fn fingerprint(&self, variant: Variant) -> Result<String, LabError> {
        let key = serde_json::json!({
            "variant": variant,
            "seed": self.config.seed,
            "corpus": self.config.corpus,
            "model": self.model_config(variant)?,
            "merges": self.tokenizer.merges(),
        });
        let digest = Sha256::digest(serde_json::to_vec(&key)?);
        Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
    }

    pub fn checkpoint_path(&self, variant: Variant) -> Result<Option<PathBuf>, LabError> {
        let Some(dir) = &self.out_dir else { return Ok(None) };
        Ok(Some(dir.join("models").join(format!("{variant}-{}.tlck", self.fingerprint(variant)?))))
    }

    /// A trained or cached checkpoint, never training.
    pub fn checkpoint(&self, variant: Variant) -> Result<Arc<Checkpoint>, LabError> {
        if let Some(c) = self.models.lock().expect("model cache").get(&variant) {
            return Ok(c.clone());
        }
        match self.checkpoint_path(variant)? {
            Some(path) if path.exists() => {
                let ckpt = Arc::new(Checkpoint::load(&path)?);
                self.models.lock().expect("model cache").insert(variant, ckpt.clone());
                Ok(ckpt)
            }
            _ => Err(LabError::MissingCheckpoint(variant)),
        }
    }

    /// Trains the variant unless a matching checkpoint exists.
    pub fn ensure(&self, variant: Variant) -> Result<Arc<Checkpoint>, LabError> {
        let _guard = self.training.lock().expect("training lock");
        match self.checkpoint(variant) {
            Err(LabError::MissingCheckpoint(_)) => self.train(variant),
            other => other,
        }
    }

    pub fn train(&self, variant: Variant) -> Result<Arc<Checkpoint>, LabError> {
        let dataset = self.dataset(variant)?;
        let config = self.model_config(variant)?;
        info!("training {variant} on {} examples", dataset.len());
        let ckpt = train_with(&dataset, &config, self.tokenizer.clone(), self.config.derived_seed(variant.as_str()))?;
        info!(
            "{variant}: {} steps, {} epochs, best validation loss {:?}",
            ckpt.metadata.steps, ckpt.metadata.epochs, ckpt.metadata.best_validation_loss
        );
        if let Some(path) = self.checkpoint_path(variant)? {
            std::fs::create_dir_all(path.parent().expect("models directory"))?;
            ckpt.save(&path)?;
        }
        let ckpt = Arc::new(ckpt);
        self.models.lock().expect("model cache").insert(variant, ckpt.clone());
        Ok(ckpt)
    }

    /// Installs an externally trained checkpoint.
    pub fn insert(&self, variant: Variant, checkpoint: Checkpoint) -> Arc<Checkpoint> {
        let ckpt = Arc::new(checkpoint);
        self.models.lock().expect("model cache").insert(variant, ckpt.clone());
        ckpt
    }

    /// The full serialized text of a record, unmasked.
    pub fn text(&self, record: &TraceRecord) -> String {
        serialize(record, false, &self.opts()).text
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::CorpusConfig;

    pub(crate) fn small() -> ExperimentConfig {
        let mut c = ExperimentConfig {
            corpus: CorpusConfig { students: 80, titles: 55, min_traces: 4, max_traces: 6, header_budget: 8, ..Default::default() },
            ..Default::default()
        };
        for m in c.models.values_mut() {
            *m = ModelConfig { vocab_size: 300, max_epochs: 1, ..ModelConfig::tiny() };
        }
        c
    }

    #[test]
    fn datasets_and_downsampling() {
        let lab = Lab::build(small(), None).unwrap();
        assert!(lab.tokenizer.vocab_size() <= 300);
        let train = lab.split(SplitLabel::Train).len();
        assert_eq!(lab.dataset(Variant::Trace).unwrap().len(), train);
        assert!(lab.dataset(Variant::Last).unwrap().len() <= train);
        let last: usize = lab.token_counts(&lab.dataset(Variant::Last).unwrap()).iter().sum();
        for v in [Variant::TraceDownsampled, Variant::SyntheticDownsampled] {
            let d: usize = lab.token_counts(&lab.dataset(v).unwrap()).iter().sum();
            assert!((d as f64 - last as f64).abs() <= 0.05 * last as f64 + 1.0, "{v}: {d} vs {last}");
        }
        let synth = lab.dataset(Variant::Synthetic).unwrap();
        assert!(synth.len() <= train && !synth.is_empty());
    }

    #[test]
    fn checkpoints_are_cached_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let lab = Lab::build(small(), Some(dir.path())).unwrap();
        assert!(matches!(lab.checkpoint(Variant::Last), Err(LabError::MissingCheckpoint(Variant::Last))));
        let trained = lab.ensure(Variant::Last).unwrap();
        let path = lab.checkpoint_path(Variant::Last).unwrap().unwrap();
        assert!(path.exists());
        let again = Lab::build(small(), Some(dir.path())).unwrap();
        let loaded = again.checkpoint(Variant::Last).unwrap();
        assert_eq!(loaded.model.weights(), trained.model.weights());
        assert_ne!(lab.fingerprint(Variant::Last).unwrap(), lab.fingerprint(Variant::Trace).unwrap());
    }
}
