use std::collections::{BTreeMap, BTreeSet};

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use tracelab_core::corpus::{serialize_prefix, SplitLabel, TraceRecord};
use tracelab_core::metrics::{bleu, mean, pearson_or_zero, record_metrics, self_bleu, sem, trace_metrics, EditType, TraceMetrics};
use tracelab_core::model::{parse_generation, sample, LanguageModel, ParsedGeneration};

use crate::config::{derive_seed, Variant};
use crate::results::{ResultRow, RowSink};
use crate::{Lab, LabError};

/// Trace properties compared between generated and real traces.
pub const TRACE_METRICS: [&str; 8] =
    ["backtracking_ratio", "attempts", "duration_seconds", "comments", "lines", "colors", "executes", "deletions"];

/// Named values of one trace's metrics, edit counts included.
pub fn metric_values(m: &TraceMetrics) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    if let Some(b) = m.backtracking_ratio {
        out.insert("backtracking_ratio".into(), b);
    }
    out.insert("attempts".into(), m.attempts as f64);
    out.insert("duration_seconds".into(), m.duration_seconds as f64);
    out.insert("comments".into(), m.features.comments);
    out.insert("lines".into(), m.features.lines);
    out.insert("colors".into(), m.features.colors.iter().sum());
    out.insert("executes".into(), if m.final_execution.success { 1.0 } else { 0.0 });
    out.insert("deletions".into(), m.deletion_count() as f64);
    for e in EditType::ALL {
        out.insert(format!("edits:{}", e.as_str()), m.edit_count(e) as f64);
    }
    out
}

/// Metrics of a parsed generation, using header times when all parse.
pub fn generation_metrics(parsed: &ParsedGeneration) -> Option<TraceMetrics> {
    let times: Option<Vec<i64>> = parsed.timestamps.iter().copied().collect();
    trace_metrics(&parsed.states, times.as_deref())
}

/// Prompts for one split: up to `titles` titles, and for each up to
/// `students` distinct students, one record apiece.
pub fn select_prompts<'a>(
    records: &[&'a TraceRecord],
    titles: usize,
    students: usize,
    seed: u64,
) -> Vec<&'a TraceRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_title: BTreeMap<&str, BTreeMap<&str, &'a TraceRecord>> = BTreeMap::new();
    for r in records {
        by_title.entry(r.title.as_str()).or_default().entry(r.student_id.as_str()).or_insert(r);
    }
    let mut names: Vec<&str> = by_title.keys().copied().collect();
    names.shuffle(&mut rng);
    let mut out = Vec::new();
    for t in names.into_iter().take(titles) {
        let mut rs: Vec<&'a TraceRecord> = by_title[t].values().copied().collect();
        rs.shuffle(&mut rng);
        out.extend(rs.into_iter().take(students));
    }
    out
}

/// Samples of one model for one prompt, scored against the real trace.
#[derive(Clone, Debug, Default)]
pub struct PromptScores {
    /// Per metric, one value per sample where defined.
    pub values: BTreeMap<String, Vec<f64>>,
    pub strict: BTreeMap<String, Vec<f64>>,
    pub finals: Vec<String>,
    pub samples: usize,
}

impl PromptScores {
    fn add(&mut self, key: &str, v: f64) {
        self.values.entry(key.into()).or_default().push(v);
    }
}

pub fn score_samples(
    model: &LanguageModel,
    record: &TraceRecord,
    prompt: &str,
    student: Option<&str>,
    seeds: &[u64],
    top_p: f64,
) -> Result<PromptScores, LabError> {
    let reference = record.final_program().unwrap_or("");
    let mut s = PromptScores { samples: seeds.len(), ..Default::default() };
    for &seed in seeds {
        let g = sample(model, prompt, student, top_p, seed)?;
        let parsed = parse_generation(&g.full_text());
        s.add("eos_rate", if parsed.reached_eos { 1.0 } else { 0.0 });
        s.add("degenerate_rate", if parsed.is_degenerate() { 1.0 } else { 0.0 });
        let Some(last) = parsed.final_state(false) else { continue };
        s.add("bleu", bleu(last, reference));
        s.finals.push(last.to_string());
        if let Some(m) = generation_metrics(&parsed) {
            for (k, v) in metric_values(&m) {
                if parsed.reached_eos {
                    s.strict.entry(k.clone()).or_default().push(v);
                }
                s.add(&k, v);
            }
        }
    }
    if s.finals.len() >= 2 {
        let sb = self_bleu(&s.finals)?;
        s.add("self_bleu", sb);
    }
    Ok(s)
}

fn correlation_rows(sink: &mut RowSink, experiment: &str, variant: &str, split: &str, pairs: &BTreeMap<String, (Vec<f64>, Vec<f64>)>) {
    let saved = std::mem::replace(&mut sink.experiment, experiment.to_string());
    for (metric, (generated, real)) in pairs {
        if generated.len() < 3 {
            continue;
        }
        let r = pearson_or_zero(generated, real).unwrap_or(0.0);
        let n = generated.len() as f64;
        let se = ((1.0 - r * r).max(0.0) / (n - 2.0)).sqrt();
        sink.push(variant, split, "all", metric, r, Some(se));
        sink.push(variant, split, "all", &format!("{metric}:n"), n, None);
    }
    sink.experiment = saved;
}

/// Samples every configured variant on prompts from every configured split.
pub fn run(lab: &Lab) -> Result<Vec<ResultRow>, LabError> {
    let cfg = &lab.config.eval;
    let opts = lab.opts();
    let mut sink = RowSink::new("behavioral", &lab.config_hash);
    for &split in &cfg.splits {
        let pool = lab.split(split);
        let prompts = select_prompts(
            &pool,
            cfg.titles_per_split,
            cfg.students_per_title,
            lab.config.derived_seed(&format!("prompts:{split}")),
        );
        info!("behavioral {split}: {} prompts", prompts.len());
        let reference: Vec<BTreeMap<String, f64>> =
            prompts.iter().map(|r| record_metrics(r).map(|m| metric_values(&m)).unwrap_or_default()).collect();
        for (r, vals) in prompts.iter().zip(&reference) {
            for (k, v) in vals {
                sink.push("reference", split.as_str(), &subject(r), k, *v, None);
            }
        }
        for &variant in &cfg.variants {
            let ckpt = lab.checkpoint(variant)?;
            let scores: Vec<PromptScores> = prompts
                .par_iter()
                .enumerate()
                .map(|(i, r)| {
                    let prompt = serialize_prefix(r, 0, false, &opts);
                    let seeds: Vec<u64> = (0..cfg.n_samples)
                        .map(|j| derive_seed(lab.config.seed, &format!("behavioral:{split}:{i}:{j}")))
                        .collect();
                    score_samples(&ckpt.model, r, &prompt, Some(&r.student_id), &seeds, cfg.top_p)
                })
                .collect::<Result<_, _>>()?;
            emit(&mut sink, variant, split, &prompts, &reference, &scores);
        }
    }
    Ok(sink.rows)
}

fn subject(r: &TraceRecord) -> String {
    format!("{}|{}", r.student_id, r.title)
}

fn emit(
    sink: &mut RowSink,
    variant: Variant,
    split: SplitLabel,
    prompts: &[&TraceRecord],
    reference: &[BTreeMap<String, f64>],
    scores: &[PromptScores],
) {
    let (v, sp) = (variant.as_str(), split.as_str());
    let mut pairs: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut strict: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut summary: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for ((r, real), s) in prompts.iter().zip(reference).zip(scores) {
        let subj = subject(r);
        for (k, xs) in &s.values {
            let m = mean(xs);
            sink.push(v, sp, &subj, k, m, (xs.len() >= 2).then(|| sem(xs)));
            if let Some(rv) = real.get(k) {
                let e = pairs.entry(k.clone()).or_default();
                e.0.push(m);
                e.1.push(*rv);
            }
        }
        for (k, xs) in &s.strict {
            if let Some(rv) = real.get(k) {
                let e = strict.entry(k.clone()).or_default();
                e.0.push(mean(xs));
                e.1.push(*rv);
            }
        }
        for key in ["bleu", "self_bleu", "eos_rate", "degenerate_rate"] {
            if let Some(xs) = s.values.get(key) {
                summary.entry(key).or_default().push(mean(xs));
            }
        }
    }
    correlation_rows(sink, "behavioral-correlation", v, sp, &pairs);
    correlation_rows(sink, "behavioral-correlation-strict", v, sp, &strict);
    let saved = std::mem::replace(&mut sink.experiment, "behavioral-summary".into());
    for (k, xs) in summary {
        sink.push(v, sp, "all", k, mean(&xs), Some(sem(&xs)));
    }
    sink.experiment = saved;
}

/// Distinct students among prompts, for reporting.
pub fn prompt_students(prompts: &[&TraceRecord]) -> usize {
    prompts.iter().map(|r| r.student_id.as_str()).collect::<BTreeSet<_>>().len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use tracelab_core::corpus::TraceEvent;

    fn rec(student: &str, title: &str) -> TraceRecord {
        TraceRecord::new(student, title, vec![TraceEvent { ts: 0, code: "fd 1".into() }])
    }

    #[test]
    fn prompt_selection_caps_titles_and_students() {
        let rs: Vec<TraceRecord> =
            (0..5).flat_map(|t| (0..4).flat_map(move |s| { let r = rec(&format!("s{s}"), &format!("t{t}")); [r.clone(), r] })).collect();
        let refs: Vec<&TraceRecord> = rs.iter().collect();
        let p = select_prompts(&refs, 3, 2, 1);
        assert_eq!(p.len(), 6);
        assert_eq!(p.iter().map(|r| &r.title).collect::<BTreeSet<_>>().len(), 3);
        for t in p.iter().map(|r| &r.title).collect::<BTreeSet<_>>() {
            let students: BTreeSet<_> = p.iter().filter(|r| &r.title == t).map(|r| &r.student_id).collect();
            assert_eq!(students.len(), 2);
        }
        assert_eq!(select_prompts(&refs, 3, 2, 1), p);
        assert!(prompt_students(&p) <= 4);
    }

    #[test]
    fn metric_names_cover_trace_metrics() {
        let m = trace_metrics(&["fd 1", "fd 1\nrt 90", "fd 1"], Some(&[0, 10, 30])).unwrap();
        let vals = metric_values(&m);
        for k in TRACE_METRICS {
            assert!(vals.contains_key(k), "{k}");
        }
        assert_eq!(vals["duration_seconds"], 30.0);
        assert_eq!(vals["deletions"], 1.0);
    }

    #[test]
    fn generation_metrics_use_header_times() {
        let parsed = parse_generation(
            "t<start>CODE 1 (2020-01-01 00:00:00):\nfd 1\nCODE 2 (2020-01-01 00:01:00):\nfd 2\n<|endoftext|>",
        );
        let m = generation_metrics(&parsed).unwrap();
        assert_eq!(m.duration_seconds, 60);
        assert_eq!(m.attempts, 2);
    }
}
