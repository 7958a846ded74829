use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Datelike};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ProbeDataset, ProbeError, ProbeTask};
use crate::corpus::{serialize_prefix, SerializeOptions, TraceRecord};
use crate::metrics::{edit_distance, record_metrics, EditType};
use crate::minilang::{execute, parse, DEFAULT_STEP_BUDGET};
use crate::model::LanguageModel;

/// Properties predicted from embeddings of trace prefixes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CodeTarget {
    Title,
    IsFinal,
    Halfway,
    WillBacktrack,
    FutureAttempts,
    FutureSeconds,
    EditDistanceToFinal,
    FinalExecutes,
}

impl CodeTarget {
    pub const ALL: [CodeTarget; 8] = [
        CodeTarget::Title,
        CodeTarget::IsFinal,
        CodeTarget::Halfway,
        CodeTarget::WillBacktrack,
        CodeTarget::FutureAttempts,
        CodeTarget::FutureSeconds,
        CodeTarget::EditDistanceToFinal,
        CodeTarget::FinalExecutes,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CodeTarget::Title => "title",
            CodeTarget::IsFinal => "is-final",
            CodeTarget::Halfway => "halfway",
            CodeTarget::WillBacktrack => "will-backtrack",
            CodeTarget::FutureAttempts => "future-attempts",
            CodeTarget::FutureSeconds => "future-seconds",
            CodeTarget::EditDistanceToFinal => "edit-distance-to-final",
            CodeTarget::FinalExecutes => "final-executes",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == name)
    }

    pub fn task(self) -> ProbeTask {
        match self {
            CodeTarget::FutureAttempts | CodeTarget::FutureSeconds | CodeTarget::EditDistanceToFinal => {
                ProbeTask::Regression
            }
            _ => ProbeTask::Classification,
        }
    }

    /// Titles are hidden from the input when they are the target.
    pub fn masks_title(self) -> bool {
        self == CodeTarget::Title
    }

    /// Whether the prefix with `t` of `total` states enters the dataset.
    fn keeps(self, t: usize, total: usize) -> bool {
        match self {
            CodeTarget::Title => t > 0,
            CodeTarget::IsFinal => true,
            _ => t < total,
        }
    }
}

/// Code embeddings of every prefix of every record; `None` marks prefixes
/// longer than the model context.
#[derive(Clone, Debug)]
pub struct PrefixEmbeddings {
    pub mask_title: bool,
    pub per_record: Vec<Vec<Option<Vec<f64>>>>,
}

/// Embeds prefixes with 0..=T states of each record. `students` replaces
/// the record's own student id, one entry per record; `layer` picks a
/// residual-stream layer (the last by default).
pub fn embed_prefixes(
    model: &LanguageModel,
    records: &[TraceRecord],
    students: Option<&[String]>,
    mask_title: bool,
    opts: &SerializeOptions,
    layer: Option<usize>,
) -> PrefixEmbeddings {
    let per_record = records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let student = students.map_or(r.student_id.as_str(), |s| s[i].as_str());
            (0..=r.events.len())
                .map(|t| {
                    let text = serialize_prefix(r, t, mask_title, opts);
                    match layer {
                        None => model.embed_code(&text, Some(student)),
                        Some(l) => model.layer_means(&text, Some(student)).and_then(|mut ls| {
                            (l < ls.len()).then(|| ls.swap_remove(l))
                        }),
                    }
                })
                .collect()
        })
        .collect();
    PrefixEmbeddings { mask_title, per_record }
}

fn state(record: &TraceRecord, t: usize) -> &str {
    if t == 0 {
        ""
    } else {
        &record.events[t - 1].code
    }
}

fn label(record: &TraceRecord, t: usize, target: CodeTarget, titles: &BTreeMap<&str, usize>) -> f64 {
    let total = record.events.len();
    let last = state(record, total);
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    match target {
        CodeTarget::Title => titles[record.title.as_str()] as f64,
        CodeTarget::IsFinal => flag(t == total),
        CodeTarget::Halfway => flag(2 * t >= total),
        CodeTarget::WillBacktrack => flag(
            (t..total).any(|s| edit_distance(state(record, s + 1), last) > edit_distance(state(record, s), last)),
        ),
        CodeTarget::FutureAttempts => (total - t) as f64,
        CodeTarget::FutureSeconds => {
            let now = record.events[t.saturating_sub(1)].ts;
            let end = record.events[total - 1].ts;
            ((end - now).max(0) as f64).ln_1p()
        }
        CodeTarget::EditDistanceToFinal => edit_distance(state(record, t), last) as f64,
        CodeTarget::FinalExecutes => flag(execute(&parse(last), DEFAULT_STEP_BUDGET).success),
    }
}

/// Labels precomputed embeddings for one target, applying its prefix
/// filter and dropping overlong prefixes.
pub fn code_probe_dataset(
    records: &[TraceRecord],
    embeddings: &PrefixEmbeddings,
    target: CodeTarget,
) -> Result<ProbeDataset, ProbeError> {
    if embeddings.per_record.len() != records.len() {
        return Err(ProbeError::Malformed("one embedding list per record expected".into()));
    }
    if target.masks_title() && !embeddings.mask_title {
        return Err(ProbeError::Malformed("title probes need title-masked embeddings".into()));
    }
    let title_set: BTreeSet<&str> = records.iter().map(|r| r.title.as_str()).collect();
    let titles: BTreeMap<&str, usize> = title_set.iter().enumerate().map(|(i, t)| (*t, i)).collect();
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for (record, embs) in records.iter().zip(&embeddings.per_record) {
        let total = record.events.len();
        if total == 0 {
            continue;
        }
        for (t, emb) in embs.iter().enumerate() {
            let Some(emb) = emb else { continue };
            if target.keeps(t, total) {
                inputs.push(emb.clone());
                targets.push(label(record, t, target, &titles));
            }
        }
    }
    if inputs.is_empty() {
        return Err(ProbeError::EmptyAfterFiltering);
    }
    let mut out = ProbeDataset::new(inputs, targets, target.task(), format!("code:{}", target.as_str()))?;
    if target == CodeTarget::Title {
        out.classes = title_set.into_iter().map(str::to_string).collect();
    } else if target.task() == ProbeTask::Classification {
        out.classes = vec!["no".into(), "yes".into()];
    }
    if target == CodeTarget::FutureSeconds {
        out.provenance.push_str(" (log1p seconds)");
    }
    Ok(out)
}

/// Embeds and labels in one go.
pub fn build_code_probe_dataset(
    model: &LanguageModel,
    records: &[TraceRecord],
    target: CodeTarget,
    opts: &SerializeOptions,
) -> Result<ProbeDataset, ProbeError> {
    let embeddings = embed_prefixes(model, records, None, target.masks_title(), opts, None);
    code_probe_dataset(records, &embeddings, target)
}

/// The records' student ids in a seeded random order, for rebuilding code
/// embeddings under the wrong students.
pub fn shuffled_student_ids(records: &[TraceRecord], seed: u64) -> Vec<String> {
    let mut ids: Vec<String> = records.iter().map(|r| r.student_id.clone()).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    ids
}

/// Inputs reordered so example `i` receives input `perm[i]`.
pub fn permute_inputs(dataset: &ProbeDataset, perm: &[usize]) -> ProbeDataset {
    let mut out = dataset.clone();
    out.inputs = perm.iter().map(|&j| dataset.inputs[j].clone()).collect();
    out
}

/// A control dataset with inputs shuffled against targets.
pub fn shuffle_embeddings(dataset: &ProbeDataset, seed: u64) -> ProbeDataset {
    let mut perm: Vec<usize> = (0..dataset.len()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = permute_inputs(dataset, &perm);
    out.provenance = format!("{} [shuffled inputs]", dataset.provenance);
    out
}

/// Per-trace metrics averaged over a student's traces.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StudentMetric {
    BacktrackingRatio,
    Attempts,
    DurationSeconds,
    Comments,
    Lines,
    Colors,
    Keyword(String),
    Edit(EditType),
    FinalExecution,
    Year,
}

impl StudentMetric {
    pub fn name(&self) -> String {
        match self {
            StudentMetric::BacktrackingRatio => "backtracking-ratio".into(),
            StudentMetric::Attempts => "attempts".into(),
            StudentMetric::DurationSeconds => "duration-seconds".into(),
            StudentMetric::Comments => "comments".into(),
            StudentMetric::Lines => "lines".into(),
            StudentMetric::Colors => "colors".into(),
            StudentMetric::Keyword(k) => format!("keyword:{k}"),
            StudentMetric::Edit(e) => format!("edit:{}", e.as_str()),
            StudentMetric::FinalExecution => "final-execution".into(),
            StudentMetric::Year => "year".into(),
        }
    }

    pub fn parse(name: &str) -> Result<Self, ProbeError> {
        let m = match name {
            "backtracking-ratio" => StudentMetric::BacktrackingRatio,
            "attempts" => StudentMetric::Attempts,
            "duration-seconds" => StudentMetric::DurationSeconds,
            "comments" => StudentMetric::Comments,
            "lines" => StudentMetric::Lines,
            "colors" => StudentMetric::Colors,
            "final-execution" => StudentMetric::FinalExecution,
            "year" => StudentMetric::Year,
            other => {
                if let Some(k) = other.strip_prefix("keyword:") {
                    StudentMetric::Keyword(k.to_string())
                } else if let Some(e) = other.strip_prefix("edit:") {
                    let kind = EditType::ALL.into_iter().find(|k| k.as_str() == e);
                    StudentMetric::Edit(kind.ok_or_else(|| ProbeError::UnknownMetric(name.into()))?)
                } else {
                    return Err(ProbeError::UnknownMetric(name.into()));
                }
            }
        };
        Ok(m)
    }

    /// The metric on one trace; `None` where it is undefined.
    pub fn value(&self, record: &TraceRecord) -> Option<f64> {
        if let StudentMetric::Year = self {
            let ts = record.events.first()?.ts;
            return DateTime::from_timestamp(ts, 0).map(|d| d.year() as f64);
        }
        let m = record_metrics(record)?;
        Some(match self {
            StudentMetric::BacktrackingRatio => m.backtracking_ratio?,
            StudentMetric::Attempts => m.attempts as f64,
            StudentMetric::DurationSeconds => m.duration_seconds as f64,
            StudentMetric::Comments => m.features.comments,
            StudentMetric::Lines => m.features.lines,
            StudentMetric::Colors => m.features.colors.iter().sum(),
            StudentMetric::Keyword(k) => m.features.keywords.get(k).copied().unwrap_or(0.0),
            StudentMetric::Edit(e) => m.edit_count(*e) as f64,
            StudentMetric::FinalExecution => {
                if m.final_execution.success {
                    1.0
                } else {
                    0.0
                }
            }
            StudentMetric::Year => unreachable!("handled above"),
        })
    }
}

/// One pair per student: the first perceptron layer of the student's soft
/// token and the metric averaged over the student's traces. Students
/// without a defined value are skipped.
pub fn build_student_probe_dataset(
    model: &LanguageModel,
    records: &[TraceRecord],
    students: &[String],
    metric: &StudentMetric,
) -> Result<ProbeDataset, ProbeError> {
    let mut values: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in records {
        if let Some(v) = metric.value(r) {
            values.entry(r.student_id.as_str()).or_default().push(v);
        }
    }
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for s in students {
        let Some(vs) = values.get(s.as_str()) else { continue };
        inputs.push(model.student_embedding(s));
        targets.push(vs.iter().sum::<f64>() / vs.len() as f64);
    }
    if inputs.is_empty() {
        return Err(ProbeError::EmptyAfterFiltering);
    }
    ProbeDataset::new(inputs, targets, ProbeTask::Regression, format!("student:{}", metric.name()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TraceEvent;
    use crate::model::{ModelConfig, Tokenizer};

    fn record(student: &str, title: &str, states: &[&str]) -> TraceRecord {
        let events = states
            .iter()
            .enumerate()
            .map(|(i, c)| TraceEvent { ts: 1_600_000_000 + 60 * i as i64, code: c.to_string() })
            .collect();
        TraceRecord::new(student, title, events)
    }

    fn model() -> LanguageModel {
        LanguageModel::new(ModelConfig { context: 128, ..ModelConfig::tiny() }, Tokenizer::bytes_only(), 1).unwrap()
    }

    #[test]
    fn prefix_filters() {
        let m = model();
        let opts = SerializeOptions { header_budget: 4 };
        let recs = vec![record("a", "sun", &["fd 10", "fd 99", "fd 10"])];
        let is_final = build_code_probe_dataset(&m, &recs, CodeTarget::IsFinal, &opts).unwrap();
        assert_eq!(is_final.targets, vec![0.0, 0.0, 0.0, 1.0]);
        let back = build_code_probe_dataset(&m, &recs, CodeTarget::WillBacktrack, &opts).unwrap();
        // Distances to the final state: 5, 0, 2, 0.
        assert_eq!(back.targets, vec![1.0, 1.0, 0.0]);
        let title = build_code_probe_dataset(&m, &recs, CodeTarget::Title, &opts).unwrap();
        assert_eq!(title.len(), 3);
        let dist = build_code_probe_dataset(&m, &recs, CodeTarget::EditDistanceToFinal, &opts).unwrap();
        assert_eq!(dist.targets, vec![5.0, 0.0, 2.0]);
        let attempts = build_code_probe_dataset(&m, &recs, CodeTarget::FutureAttempts, &opts).unwrap();
        assert_eq!(attempts.targets, vec![3.0, 2.0, 1.0]);
        let secs = build_code_probe_dataset(&m, &recs, CodeTarget::FutureSeconds, &opts).unwrap();
        assert_eq!(secs.targets[0], 120f64.ln_1p());
        assert_eq!(secs.targets[2], 60f64.ln_1p());
    }

    #[test]
    fn repeated_final_state_has_zero_distance() {
        let m = model();
        let opts = SerializeOptions { header_budget: 4 };
        let recs = vec![record("a", "sun", &["fd 1", "fd 2", "fd 1", "fd 2"])];
        let dist = build_code_probe_dataset(&m, &recs, CodeTarget::EditDistanceToFinal, &opts).unwrap();
        assert_eq!(dist.targets[2], 0.0);
    }

    #[test]
    fn overlong_prefixes_are_dropped() {
        let m = model();
        let opts = SerializeOptions { header_budget: 4 };
        let long = "fd 10\n".repeat(30);
        let recs = vec![record("a", "sun", &["fd 1", &long])];
        let d = build_code_probe_dataset(&m, &recs, CodeTarget::IsFinal, &opts).unwrap();
        assert_eq!(d.len(), 2);
        let none = vec![record("a", "sun", &[&long])];
        assert_eq!(build_code_probe_dataset(&m, &none, CodeTarget::IsFinal, &opts).unwrap().len(), 1);
        assert!(matches!(
            build_code_probe_dataset(&m, &none, CodeTarget::Title, &opts),
            Err(ProbeError::EmptyAfterFiltering)
        ));
    }

    #[test]
    fn student_means() {
        let m = model();
        let recs = vec![
            record("a", "x", &["# one\nfd 1"]),
            record("a", "y", &["# one\nfd 1"]),
            record("b", "x", &["fd 1"]),
        ];
        let students = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let d = build_student_probe_dataset(&m, &recs, &students, &StudentMetric::Comments).unwrap();
        assert_eq!(d.targets, vec![1.0, 0.0]);
        assert_eq!(d.dim(), 8);
        let y = build_student_probe_dataset(&m, &recs, &students, &StudentMetric::Year).unwrap();
        assert_eq!(y.targets, vec![2020.0, 2020.0]);
        for name in ["comments", "keyword:await", "edit:color-change", "year"] {
            assert_eq!(StudentMetric::parse(name).unwrap().name(), name);
        }
        assert!(StudentMetric::parse("nope").is_err());
    }

    #[test]
    fn shuffles_are_seeded() {
        let d = ProbeDataset::new(
            (0..10).map(|i| vec![i as f64]).collect(),
            (0..10).map(|i| i as f64).collect(),
            ProbeTask::Regression,
            "x",
        )
        .unwrap();
        let ident: Vec<usize> = (0..10).collect();
        assert_eq!(permute_inputs(&d, &ident), d);
        assert_eq!(shuffle_embeddings(&d, 3), shuffle_embeddings(&d, 3));
        assert_ne!(shuffle_embeddings(&d, 3).inputs, d.inputs);
        let recs: Vec<TraceRecord> = (0..6).map(|i| record(&format!("s{i}"), "t", &["fd 1"])).collect();
        let ids = shuffled_student_ids(&recs, 1);
        assert_eq!(ids, shuffled_student_ids(&recs, 1));
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(sorted, recs.iter().map(|r| r.student_id.clone()).collect::<Vec<_>>());
    }
}
