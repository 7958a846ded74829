use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::{FinetuneConfig, ModelConfig};
use super::embedder::UNKNOWN_ROW;
use super::lm::{Grads, LanguageModel};
use super::optim::{clip_global_norm, scheduled_lr, Adam};
use super::tokenizer::Tokenizer;
use super::ModelError;
use crate::corpus::{chunk_ranges, SerializedExample};

/// Largest number of traces per student accepted by [`finetune_students`].
pub const MAX_FINETUNE_TRACES: usize = 10;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub steps: usize,
    pub epochs: usize,
    pub train_examples: usize,
    pub validation_examples: usize,
    pub train_tokens: usize,
    pub best_validation_loss: Option<f64>,
    pub stopped_early: bool,
    pub history: Vec<EvalPoint>,
}

/// A token window with the table row of its student.
#[derive(Clone, Debug)]
struct Window {
    row: usize,
    tokens: Vec<u32>,
}

fn windows(model: &LanguageModel, examples: &[(usize, &str)]) -> Result<Vec<Window>, ModelError> {
    let ctx = model.config.context;
    let overlap = model.config.chunk_overlap;
    let mut out = Vec::new();
    for &(row, text) in examples {
        let tokens = model.tokenizer.encode(text);
        let ranges = chunk_ranges(tokens.len(), ctx, overlap).map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
        out.extend(ranges.into_iter().map(|r| Window { row, tokens: tokens[r].to_vec() }));
    }
    Ok(out)
}

/// Mean per-token loss over `windows` with their own rows.
fn mean_loss(model: &LanguageModel, windows: &[Window]) -> f64 {
    let mut loss = 0.0;
    let mut count = 0;
    for w in windows {
        loss += model.loss_and_grad(w.row, &w.tokens, 1.0, None);
        count += w.tokens.len();
    }
    loss / count.max(1) as f64
}

/// Trains a tokenizer on the dataset, then the model.
pub fn train(dataset: &[SerializedExample], config: &ModelConfig, seed: u64) -> Result<Checkpoint, ModelError> {
    if dataset.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    config.validate()?;
    let tokenizer = Tokenizer::train(dataset.iter().map(|e| e.text.as_str()), config.vocab_size);
    train_with(dataset, config, tokenizer, seed)
}

/// Trains with a fixed tokenizer. Examples with an empty student id train
/// the UNKNOWN row.
pub fn train_with(
    dataset: &[SerializedExample],
    config: &ModelConfig,
    tokenizer: Tokenizer,
    seed: u64,
) -> Result<Checkpoint, ModelError> {
    if dataset.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut model = LanguageModel::new(config.clone(), tokenizer, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7472_6169_6e00);
    let students: BTreeSet<&str> = dataset.iter().map(|e| e.student_id.as_str()).filter(|s| !s.is_empty()).collect();
    let normal = Normal::new(0.0, 0.02).expect("valid std");
    for s in &students {
        let init: Vec<f64> = (0..config.width).map(|_| normal.sample(&mut rng)).collect();
        model.embedder.add_student(s, &init);
    }

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    let n_val = if dataset.len() > 1 {
        ((dataset.len() as f64 * config.validation_fraction).round() as usize).min(dataset.len() - 1)
    } else {
        0
    };
    let tagged = |idx: &[usize]| -> Vec<(usize, &str)> {
        idx.iter()
            .map(|&i| (model.embedder.row_of(Some(&dataset[i].student_id)), dataset[i].text.as_str()))
            .collect()
    };
    let (val_idx, train_idx) = order.split_at(n_val);
    let val = windows(&model, &tagged(val_idx))?;
    let mut train_windows = windows(&model, &tagged(train_idx))?;
    let train_tokens: usize = train_windows.iter().map(|w| w.tokens.len()).sum();

    let batch = config.batch_size;
    let steps_per_epoch = train_windows.len().div_ceil(batch);
    let total_steps = steps_per_epoch * config.max_epochs;
    let mut meta = TrainingMetadata {
        seed,
        train_examples: train_idx.len(),
        validation_examples: val_idx.len(),
        train_tokens,
        ..TrainingMetadata::default()
    };
    let mut grads = Grads::zeros(&model);
    let mut opt_w = Adam::new(model.weights.len());
    let mut opt_mlp = Adam::new(model.embedder.mlp.len());
    let mut opt_table = Adam::new(model.embedder.table.len());
    let mut best: Option<(f64, LanguageModel)> = None;
    let mut stale = 0;
    let mut running = (0.0, 0usize);
    let mut step = 0;

    'epochs: for epoch in 0..config.max_epochs {
        train_windows.shuffle(&mut rng);
        for chunk in train_windows.chunks(batch) {
            grads.clear();
            let tokens: usize = chunk.iter().map(|w| w.tokens.len()).sum();
            let scale = 1.0 / tokens as f64;
            let mut loss = 0.0;
            for w in chunk {
                let row = if rng.random_bool(config.unknown_dropout) { UNKNOWN_ROW } else { w.row };
                loss += model.loss_and_grad(row, &w.tokens, scale, Some((&mut grads, true)));
            }
            let loss = loss / tokens as f64;
            if !loss.is_finite() {
                return Err(ModelError::Divergence { step, loss });
            }
            clip_global_norm(&mut [&mut grads.weights, &mut grads.mlp, &mut grads.table], config.grad_clip);
            let lr = scheduled_lr(config.learning_rate, step, total_steps, config.warmup_steps);
            opt_w.step(&mut model.weights, &grads.weights, lr, None);
            opt_mlp.step(&mut model.embedder.mlp, &grads.mlp, lr, None);
            opt_table.step(&mut model.embedder.table, &grads.table, lr, None);
            step += 1;
            running.0 += loss;
            running.1 += 1;

            let last = step == total_steps;
            if step % config.eval_every.max(1) == 0 || last {
                let train_loss = running.0 / running.1 as f64;
                running = (0.0, 0);
                let validation_loss = (!val.is_empty()).then(|| mean_loss(&model, &val));
                info!("step {step} epoch {epoch} train {train_loss:.4} val {validation_loss:?}");
                meta.history.push(EvalPoint { step, train_loss, validation_loss });
                if let Some(v) = validation_loss {
                    if !v.is_finite() {
                        return Err(ModelError::Divergence { step, loss: v });
                    }
                    if best.as_ref().is_none_or(|(b, _)| v < *b) {
                        best = Some((v, model.clone()));
                        stale = 0;
                    } else {
                        stale += 1;
                        if stale >= config.patience {
                            meta.stopped_early = true;
                            meta.epochs = epoch + 1;
                            break 'epochs;
                        }
                    }
                }
            }
        }
        meta.epochs = epoch + 1;
    }
    meta.steps = step;
    if let Some((v, m)) = best {
        meta.best_validation_loss = Some(v);
        model = m;
    }
    Ok(Checkpoint { model, metadata: meta })
}

/// Adapts the student perceptron and fresh table rows to new students,
/// using each student's first `k` examples. Every other weight is frozen.
///
/// `traces` must list each student's examples in chronological order. When
/// a student has a further example it serves as validation data.
pub fn finetune_students(
    checkpoint: &Checkpoint,
    traces: &[SerializedExample],
    k: usize,
    config: &FinetuneConfig,
    seed: u64,
) -> Result<Checkpoint, ModelError> {
    if !(1..=MAX_FINETUNE_TRACES).contains(&k) {
        return Err(ModelError::InvalidArgument(format!("k must be in 1..={MAX_FINETUNE_TRACES}, got {k}")));
    }
    if traces.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut model = checkpoint.model.clone();
    let mut by_student: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for e in traces {
        by_student.entry(e.student_id.as_str()).or_default().push(e.text.as_str());
    }
    let unknown = model.embedder.row(UNKNOWN_ROW).to_vec();
    let d = model.config.width;
    let mut rows = Vec::new();
    let mut train_set = Vec::new();
    let mut val_set = Vec::new();
    for (student, texts) in &by_student {
        let fresh = !model.embedder.contains(student);
        let row = model.embedder.add_student(student, &unknown);
        if fresh {
            rows.push(row * d..(row + 1) * d);
        }
        if texts.len() < k {
            warn!("student {student} has {} traces, fewer than k = {k}", texts.len());
        }
        train_set.extend(texts.iter().take(k).map(|t| (row, *t)));
        if let Some(t) = texts.get(k) {
            val_set.push((row, *t));
        }
    }
    let mut train_windows = windows(&model, &train_set)?;
    let val = windows(&model, &val_set)?;
    let mlp_ranges: Vec<Range<usize>> = vec![model.embedder.w1_range(), model.embedder.w2_range()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6669_6e65);
    let mut grads = Grads::zeros(&model);
    let mut opt_mlp = Adam::new(model.embedder.mlp.len());
    let mut opt_table = Adam::new(model.embedder.table.len());
    let mut meta = TrainingMetadata {
        seed,
        train_examples: train_set.len(),
        validation_examples: val_set.len(),
        train_tokens: train_windows.iter().map(|w| w.tokens.len()).sum(),
        ..TrainingMetadata::default()
    };
    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    let mut stale = 0;
    for epoch in 0..config.max_epochs {
        train_windows.shuffle(&mut rng);
        let mut epoch_loss = (0.0, 0usize);
        for chunk in train_windows.chunks(config.batch_size.max(1)) {
            grads.clear();
            let tokens: usize = chunk.iter().map(|w| w.tokens.len()).sum();
            let mut loss = 0.0;
            for w in chunk {
                loss += model.loss_and_grad(w.row, &w.tokens, 1.0 / tokens as f64, Some((&mut grads, false)));
            }
            if !loss.is_finite() {
                return Err(ModelError::Divergence { step: meta.steps, loss });
            }
            epoch_loss.0 += loss;
            epoch_loss.1 += tokens;
            opt_mlp.step(&mut model.embedder.mlp, &grads.mlp, config.learning_rate, Some(&mlp_ranges));
            opt_table.step(&mut model.embedder.table, &grads.table, config.learning_rate, Some(&rows));
            meta.steps += 1;
        }
        meta.epochs = epoch + 1;
        let train_loss = epoch_loss.0 / epoch_loss.1.max(1) as f64;
        let validation_loss = (!val.is_empty()).then(|| mean_loss(&model, &val));
        meta.history.push(EvalPoint { step: meta.steps, train_loss, validation_loss });
        if let Some(v) = validation_loss {
            if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                best = Some((v, model.embedder.mlp.clone(), model.embedder.table.clone()));
                stale = 0;
            } else {
                stale += 1;
                if stale >= config.patience {
                    meta.stopped_early = true;
                    break;
                }
            }
        }
    }
    if let Some((v, mlp, table)) = best {
        meta.best_validation_loss = Some(v);
        model.embedder.mlp = mlp;
        model.embedder.table = table;
    }
    Ok(Checkpoint { model, metadata: meta })
}
