use std::collections::BTreeMap;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use tracelab_core::corpus::{serialize, serialize_prefix, SerializedExample, TraceRecord};
use tracelab_core::metrics::{bleu, mean, pearson_or_zero, record_metrics, sem};
use tracelab_core::model::{finetune_students, parse_generation, sample, Checkpoint, FinetuneConfig};
use tracelab_core::simulator::sample_population;

use crate::behavioral::{generation_metrics, metric_values};
use crate::config::{derive_seed, Variant};
use crate::lab::simulate_records;
use crate::results::{ResultRow, RowSink};
use crate::{Lab, LabError};

/// Metrics whose per-student generated means are correlated with the truth.
pub const ADAPT_METRICS: [&str; 3] = ["backtracking_ratio", "comments", "attempts"];

/// New students split into the epoch-selection pool and the evaluated rest,
/// each with chronologically ordered traces.
pub struct Cohort {
    pub selection: Vec<(String, Vec<TraceRecord>)>,
    pub evaluated: Vec<(String, Vec<TraceRecord>)>,
}

pub fn cohort(lab: &Lab) -> Result<Cohort, LabError> {
    let a = &lab.config.adaptation;
    let max_k = a.ks.iter().copied().max().unwrap_or(1);
    let population = sample_population(a.students, lab.config.derived_seed("adapt-population"));
    let records = simulate_records(
        &population,
        &lab.templates,
        (a.min_traces, a.max_traces),
        lab.config.derived_seed("adapt-corpus"),
    )?;
    let mut by_student: BTreeMap<String, Vec<TraceRecord>> = BTreeMap::new();
    for r in records {
        by_student.entry(r.student_id.clone()).or_default().push(r);
    }
    let mut qualifying: Vec<(String, Vec<TraceRecord>)> =
        by_student.into_iter().filter(|(_, rs)| rs.len() >= max_k + 2).collect();
    if qualifying.len() < 2 {
        return Err(LabError::NoQualifyingStudents(format!(
            "{} students have at least {} traces",
            qualifying.len(),
            max_k + 2
        )));
    }
    qualifying.shuffle(&mut ChaCha8Rng::seed_from_u64(lab.config.derived_seed("adapt-selection")));
    let n_sel = ((qualifying.len() as f64 * a.selection_fraction).round() as usize)
        .max(usize::from(a.selection_fraction > 0.0))
        .min(qualifying.len() - 1);
    let evaluated = qualifying.split_off(n_sel);
    Ok(Cohort { selection: qualifying, evaluated })
}

fn finetune_set(lab: &Lab, students: &[(String, Vec<TraceRecord>)], k: usize) -> Vec<SerializedExample> {
    students
        .iter()
        .flat_map(|(_, rs)| rs.iter().take(k + 1).map(|r| serialize(r, false, &lab.opts())))
        .collect()
}

/// Epoch count with the lowest selection-pool validation loss.
pub fn select_epochs(history: &[tracelab_core::model::EvalPoint], fallback: usize) -> usize {
    history
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.validation_loss.map(|v| (i + 1, v)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map_or(fallback, |(e, _)| e)
}

/// Per-student generation scores on the held-out traces.
struct StudentScores {
    bleu_final: Option<f64>,
    bleu_trace: Option<f64>,
    generated: BTreeMap<String, f64>,
    real: BTreeMap<String, f64>,
}

fn eval_traces<'a>(lab: &Lab, traces: &'a [TraceRecord]) -> &'a [TraceRecord] {
    let a = &lab.config.adaptation;
    let start = a.ks.iter().copied().max().unwrap_or(1) + 1;
    let rest = &traces[start.min(traces.len())..];
    &rest[..a.eval_traces.min(rest.len())]
}

fn score_student(lab: &Lab, model: &Checkpoint, student: &str, traces: &[TraceRecord]) -> Result<StudentScores, LabError> {
    let a = &lab.config.adaptation;
    let mut finals = Vec::new();
    let mut whole = Vec::new();
    let mut generated: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut real: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (t, r) in eval_traces(lab, traces).iter().enumerate() {
        if let Some(m) = record_metrics(r) {
            for (key, v) in metric_values(&m) {
                real.entry(key).or_default().push(v);
            }
        }
        let prompt = serialize_prefix(r, 0, false, &lab.opts());
        let reference = r.final_program().unwrap_or("");
        let reference_trace = r.states().join("\n");
        for j in 0..a.n_samples {
            let seed = derive_seed(lab.config.seed, &format!("adapt:{student}:{t}:{j}"));
            let g = sample(&model.model, &prompt, Some(student), a.top_p, seed)?;
            let parsed = parse_generation(&g.full_text());
            let Some(last) = parsed.final_state(false) else { continue };
            finals.push(bleu(last, reference));
            whole.push(bleu(&parsed.states.join("\n"), &reference_trace));
            if let Some(m) = generation_metrics(&parsed) {
                for (key, v) in metric_values(&m) {
                    generated.entry(key).or_default().push(v);
                }
            }
        }
    }
    let avg = |m: BTreeMap<String, Vec<f64>>| m.into_iter().map(|(k, v)| (k, mean(&v))).collect();
    Ok(StudentScores {
        bleu_final: (!finals.is_empty()).then(|| mean(&finals)),
        bleu_trace: (!whole.is_empty()).then(|| mean(&whole)),
        generated: avg(generated),
        real: avg(real),
    })
}

fn evaluate(sink: &mut RowSink, lab: &Lab, model: &Checkpoint, students: &[(String, Vec<TraceRecord>)], split: &str, subject: &str) -> Result<f64, LabError> {
    let scores: Vec<StudentScores> = students
        .par_iter()
        .map(|(s, rs)| score_student(lab, model, s, rs))
        .collect::<Result<_, _>>()?;
    let v = Variant::Trace.as_str();
    for ((s, _), sc) in students.iter().zip(&scores) {
        if let Some(b) = sc.bleu_final {
            sink.push(v, split, &format!("{subject}|{s}"), "bleu_final", b, None);
        }
    }
    let finals: Vec<f64> = scores.iter().filter_map(|s| s.bleu_final).collect();
    let traces: Vec<f64> = scores.iter().filter_map(|s| s.bleu_trace).collect();
    sink.push(v, split, subject, "bleu_final", mean(&finals), Some(sem(&finals)));
    sink.push(v, split, subject, "bleu_trace", mean(&traces), Some(sem(&traces)));
    sink.push(v, split, subject, "students_scored", finals.len() as f64, None);
    for key in ADAPT_METRICS {
        let (g, r): (Vec<f64>, Vec<f64>) = scores
            .iter()
            .filter_map(|s| Some((*s.generated.get(key)?, *s.real.get(key)?)))
            .unzip();
        if g.len() >= 3 {
            sink.push(v, split, subject, &format!("r:{key}"), pearson_or_zero(&g, &r).unwrap_or(0.0), None);
        }
    }
    Ok(mean(&finals))
}

/// Adapts the trace model's student embedder to freshly simulated students
/// with k traces each and scores generations on their later traces.
pub fn run(lab: &Lab) -> Result<Vec<ResultRow>, LabError> {
    let a = &lab.config.adaptation;
    let base = lab.checkpoint(Variant::Trace)?;
    let cohort = cohort(lab)?;
    info!("adaptation: {} selection students, {} evaluated", cohort.selection.len(), cohort.evaluated.len());
    let mut sink = RowSink::new("adaptation", &lab.config_hash);
    let baseline = evaluate(&mut sink, lab, &base, &cohort.evaluated, "k=0", "base")?;
    info!("k=0 bleu {baseline:.4}");
    for &k in &a.ks {
        let epochs = if cohort.selection.is_empty() {
            a.finetune.max_epochs
        } else {
            let probe = finetune_students(
                &base,
                &finetune_set(lab, &cohort.selection, k),
                k,
                &a.finetune,
                lab.config.derived_seed(&format!("adapt-select:{k}")),
            )?;
            select_epochs(&probe.metadata.history, a.finetune.max_epochs)
        };
        let saved = std::mem::replace(&mut sink.experiment, "adaptation-selection".into());
        sink.push(Variant::Trace.as_str(), &format!("k={k}"), "selection", "epochs", epochs as f64, None);
        sink.experiment = saved;
        let fixed = FinetuneConfig { max_epochs: epochs, patience: epochs + 1, ..a.finetune.clone() };
        let data = finetune_set(lab, &cohort.evaluated, k);
        for &seed in &a.seeds {
            let tuned = finetune_students(&base, &data, k, &fixed, derive_seed(lab.config.seed, &format!("adapt:{k}:{seed}")))?;
            let unchanged = tuned.model.weights().iter().zip(base.model.weights()).all(|(x, y)| x.to_bits() == y.to_bits());
            let subject = format!("seed={seed}");
            let split = format!("k={k}");
            sink.push(Variant::Trace.as_str(), &split, &subject, "transformer_weights_unchanged", f64::from(u8::from(unchanged)), None);
            let b = evaluate(&mut sink, lab, &tuned, &cohort.evaluated, &split, &subject)?;
            info!("k={k} seed={seed}: {epochs} epochs, bleu {b:.4}");
        }
    }
    Ok(sink.rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tracelab_core::model::EvalPoint;

    #[test]
    fn epochs_follow_lowest_validation_loss() {
        let h = |v: &[Option<f64>]| -> Vec<EvalPoint> {
            v.iter().map(|l| EvalPoint { step: 0, train_loss: 1.0, validation_loss: *l }).collect()
        };
        assert_eq!(select_epochs(&h(&[Some(3.0), Some(2.0), Some(2.5)]), 9), 2);
        assert_eq!(select_epochs(&h(&[None, None]), 9), 9);
        assert_eq!(select_epochs(&[], 4), 4);
    }
}
