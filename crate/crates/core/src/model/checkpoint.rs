use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::embedder::StudentEmbedder;
use super::lm::LanguageModel;
use super::tokenizer::Tokenizer;
use super::train::TrainingMetadata;
use super::transformer::Layout;
use super::ModelError;

const MAGIC: &[u8; 4] = b"TLCK";
const VERSION: u32 = 1;

/// A trained model with its training record.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: LanguageModel,
    pub metadata: TrainingMetadata,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    offset: usize,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: ModelConfig,
    tokenizer: Tokenizer,
    students: Vec<String>,
    embedder_hidden: usize,
    metadata: TrainingMetadata,
    tensors: Vec<TensorEntry>,
    transformer_len: usize,
    mlp_len: usize,
    table_len: usize,
}

fn corrupt(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

impl Checkpoint {
    /// Magic, version, manifest length, JSON manifest, then every weight
    /// as little-endian `f64`: transformer, perceptron, table.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), ModelError> {
        let m = &self.model;
        let manifest = Manifest {
            config: m.config.clone(),
            tokenizer: m.tokenizer.clone(),
            students: m.embedder.students_by_row(),
            embedder_hidden: m.embedder.hidden,
            metadata: self.metadata.clone(),
            tensors: m
                .layout
                .tensors()
                .into_iter()
                .map(|(name, offset, shape)| TensorEntry { name, offset, shape })
                .collect(),
            transformer_len: m.weights.len(),
            mlp_len: m.embedder.mlp.len(),
            table_len: m.embedder.table.len(),
        };
        let json = serde_json::to_vec(&manifest)?;
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&(json.len() as u64).to_le_bytes())?;
        out.write_all(&json)?;
        for v in m.weights.iter().chain(&m.embedder.mlp).chain(&m.embedder.table) {
            out.write_all(&v.to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self, ModelError> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(corrupt("not a checkpoint file"));
        }
        let mut word = [0u8; 4];
        input.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        let mut len = [0u8; 8];
        input.read_exact(&mut len)?;
        let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
        input.read_exact(&mut json)?;
        let manifest: Manifest = serde_json::from_slice(&json)?;
        manifest.config.validate()?;
        let layout = Layout::new(&manifest.config, manifest.tokenizer.vocab_size());
        if layout.len() != manifest.transformer_len {
            return Err(corrupt("transformer size does not match the config"));
        }
        let mut read_vec = |n: usize| -> Result<Vec<f64>, ModelError> {
            let mut bytes = vec![0u8; n * 8];
            input.read_exact(&mut bytes)?;
            Ok(bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect())
        };
        let weights = read_vec(manifest.transformer_len)?;
        let mlp = read_vec(manifest.mlp_len)?;
        let table = read_vec(manifest.table_len)?;
        let embedder = StudentEmbedder::from_parts(
            manifest.config.width,
            manifest.embedder_hidden,
            &manifest.students,
            table,
            mlp,
        )
        .ok_or_else(|| corrupt("student embedder sizes are inconsistent"))?;
        let model = LanguageModel {
            config: manifest.config,
            tokenizer: manifest.tokenizer,
            layout,
            weights,
            embedder,
        };
        Ok(Self { model, metadata: manifest.metadata })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::generate::greedy;

    #[test]
    fn round_trip_preserves_generations() {
        let mut model = LanguageModel::new(ModelConfig::tiny(), Tokenizer::bytes_only(), 4).unwrap();
        let init = vec![0.3; 16];
        model.embedder.add_student("abc", &init);
        let ck = Checkpoint { model, metadata: TrainingMetadata { steps: 12, ..Default::default() } };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tlck");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.model.weights, ck.model.weights);
        assert_eq!(back.model.embedder, ck.model.embedder);
        assert_eq!(back.metadata, ck.metadata);
        let prefix = "x<mask><start>CODE 1 (t):\n";
        assert_eq!(greedy(&back.model, prefix, Some("abc")).unwrap(), greedy(&ck.model, prefix, Some("abc")).unwrap());
    }

    #[test]
    fn rejects_foreign_bytes() {
        assert!(matches!(Checkpoint::read_from(&b"NOPE\0\0\0\0"[..]), Err(ModelError::Checkpoint(_))));
    }
}
