use std::collections::BTreeMap;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use tracelab_core::corpus::{serialize_prefix, state_header, SplitLabel, TraceRecord};
use tracelab_core::metrics::{bleu, mean, record_metrics, sem};
use tracelab_core::minilang::{execute, parse, DEFAULT_STEP_BUDGET};
use tracelab_core::model::{parse_generation, sample, LanguageModel};

use crate::config::{derive_seed, Variant};
use crate::results::{ResultRow, RowSink};
use crate::{Lab, LabError};

/// A program state that fails to run, followed by more states.
#[derive(Clone, Debug)]
pub struct FailingState<'a> {
    pub record: &'a TraceRecord,
    /// Zero-based index of the failing event.
    pub index: usize,
}

impl FailingState<'_> {
    /// The trace up to the failing state plus the next state's header,
    /// dated `offset` seconds later.
    pub fn prompt(&self, lab: &Lab, offset: f64) -> String {
        let mut text = serialize_prefix(self.record, self.index + 1, false, &lab.opts());
        let ts = self.record.events[self.index].ts + offset.floor() as i64;
        text.push_str(&state_header(self.index + 2, ts));
        text
    }
}

fn runs(code: &str) -> bool {
    execute(&parse(code), DEFAULT_STEP_BUDGET).success
}

/// The training student with more than `min_traces` training traces and
/// the lowest mean backtracking ratio. Ties go to more traces, then to the
/// smaller id.
pub fn strong_student(lab: &Lab, min_traces: usize) -> Result<String, LabError> {
    let mut ratios: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in lab.split(SplitLabel::Train) {
        if let Some(b) = record_metrics(r).and_then(|m| m.backtracking_ratio) {
            ratios.entry(r.student_id.as_str()).or_default().push(b);
        }
    }
    let counts = lab.train_counts();
    counts
        .iter()
        .filter(|(_, n)| **n > min_traces)
        .filter_map(|(s, n)| Some((*s, *n, mean(ratios.get(s)?))))
        .min_by(|a, b| a.2.total_cmp(&b.2).then(b.1.cmp(&a.1)).then(a.0.cmp(b.0)))
        .map(|(s, _, _)| s.to_string())
        .ok_or(LabError::NoStrongStudent(min_traces))
}

/// The first failing mid-trace state of every held-out record, in seeded
/// random order, keeping prompts that fit three quarters of the context.
pub fn failing_states<'a>(lab: &'a Lab, model: &LanguageModel) -> Result<Vec<FailingState<'a>>, LabError> {
    let cfg = &lab.config.recovery;
    let mut states: Vec<FailingState<'a>> = lab
        .records
        .iter()
        .zip(&lab.splits.labels)
        .filter(|(_, l)| **l != SplitLabel::Train)
        .filter_map(|(r, _)| {
            let n = r.events.len();
            (0..n.saturating_sub(1)).find(|&j| !runs(&r.events[j].code)).map(|index| FailingState { record: r, index })
        })
        .collect();
    states.shuffle(&mut ChaCha8Rng::seed_from_u64(lab.config.derived_seed("recovery-states")));
    let limit = model.config().context * 3 / 4;
    let max_offset = cfg.time_grid.iter().copied().fold(0.0, f64::max);
    states.retain(|s| model.tokenizer().encode(&s.prompt(lab, max_offset)).len() <= limit);
    states.truncate(cfg.max_states);
    if states.is_empty() {
        return Err(LabError::NoFailingStates);
    }
    Ok(states)
}

#[derive(Clone, Debug, Default)]
struct Outcome {
    success: f64,
    degenerate: f64,
    attempts: Vec<f64>,
    bleu: Vec<f64>,
}

fn attempt(lab: &Lab, model: &LanguageModel, state: &FailingState<'_>, student: &str, offset: f64, k: usize) -> Result<Outcome, LabError> {
    let cfg = &lab.config.recovery;
    let prompt = state.prompt(lab, offset);
    let reference = state.record.final_program().unwrap_or("");
    let mut out = Outcome::default();
    for j in 0..cfg.n_samples {
        let key = format!("recovery:{}:{}:{}:{k}:{j}", state.record.student_id, state.record.title, state.index);
        let g = sample(model, &prompt, Some(student), cfg.top_p, derive_seed(lab.config.seed, &key))?;
        let parsed = parse_generation(&g.full_text());
        let new = parsed.states.len().saturating_sub(state.index + 1);
        if new == 0 {
            out.degenerate += 1.0;
            continue;
        }
        let last = parsed.states.last().expect("new states");
        if runs(last) {
            out.success += 1.0;
        }
        out.attempts.push(new as f64);
        out.bleu.push(bleu(last, reference));
    }
    let n = cfg.n_samples as f64;
    out.success /= n;
    out.degenerate /= n;
    Ok(out)
}

fn label(t: f64) -> String {
    format!("t={t}")
}

/// Asks each model to continue traces from failing states at several
/// time offsets and records how often the final state runs.
pub fn run(lab: &Lab) -> Result<Vec<ResultRow>, LabError> {
    let cfg = &lab.config.recovery;
    let trace = lab.checkpoint(Variant::Trace)?;
    let states = failing_states(lab, &trace.model)?;
    let strong = strong_student(lab, cfg.strong_min_traces)?;
    info!("recovery: {} failing states, strong student {strong}", states.len());
    let mut sink = RowSink::new("recovery", &lab.config_hash);
    sink.push("all", "all", "states", "count", states.len() as f64, None);
    for &variant in &cfg.variants {
        let ckpt = lab.checkpoint(variant)?;
        let mut conditions = vec![("embedding=true", None)];
        if variant == Variant::Trace {
            conditions.push(("strong", Some(strong.as_str())));
        }
        for (subject, swap) in conditions {
            for (k, &t) in cfg.time_grid.iter().enumerate() {
                let outcomes: Vec<Outcome> = states
                    .par_iter()
                    .map(|s| attempt(lab, &ckpt.model, s, swap.unwrap_or(&s.record.student_id), t, k))
                    .collect::<Result<_, _>>()?;
                let success: Vec<f64> = outcomes.iter().map(|o| o.success).collect();
                let degenerate: Vec<f64> = outcomes.iter().map(|o| o.degenerate).collect();
                let attempts: Vec<f64> = outcomes.iter().flat_map(|o| o.attempts.clone()).collect();
                let bleus: Vec<f64> = outcomes.iter().flat_map(|o| o.bleu.clone()).collect();
                let split = label(t);
                sink.push(variant.as_str(), &split, subject, "success_rate", mean(&success), Some(sem(&success)));
                sink.push(variant.as_str(), &split, subject, "degenerate_rate", mean(&degenerate), Some(sem(&degenerate)));
                sink.push(variant.as_str(), &split, subject, "attempts", mean(&attempts), Some(sem(&attempts)));
                sink.push(variant.as_str(), &split, subject, "bleu", mean(&bleus), Some(sem(&bleus)));
                info!("recovery {variant} {subject} {split}: success {:.3}", mean(&success));
            }
        }
    }
    Ok(sink.rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_labels() {
        assert_eq!(label(0.5), "t=0.5");
        assert_eq!(label(6400.0), "t=6400");
    }

    #[test]
    fn failing_programs_are_detected() {
        assert!(runs("fd 10\n"));
        assert!(!runs("pen babyblue\n"));
    }
}
