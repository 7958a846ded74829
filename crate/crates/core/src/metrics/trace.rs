use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::distance::backtracking_ratio;
use super::edits::{classify_edit, EditType};
use crate::corpus::TraceRecord;
use crate::minilang::{execute, parse, Analyzer, ExecutionResult, Program, COLORS, DEFAULT_STEP_BUDGET};

/// Per-state static features averaged over a trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeans {
    pub keywords: BTreeMap<String, f64>,
    pub colors: Vec<f64>,
    pub comments: f64,
    pub lines: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceMetrics {
    pub backtracking_ratio: Option<f64>,
    pub attempts: usize,
    pub duration_seconds: i64,
    pub features: FeatureMeans,
    pub edit_counts: BTreeMap<EditType, usize>,
    pub final_execution: ExecutionResult,
}

impl TraceMetrics {
    pub fn edit_count(&self, kind: EditType) -> usize {
        self.edit_counts.get(&kind).copied().unwrap_or(0)
    }

    pub fn deletion_count(&self) -> usize {
        self.edit_count(EditType::SmallDeletion) + self.edit_count(EditType::LargeDeletion)
    }
}

/// Metrics for a sequence of states, optionally timestamped.
///
/// Consecutive identical states are collapsed first, keeping the latest
/// timestamp of each run, so every remaining transition is a real edit.
/// Returns `None` for an empty trace.
pub fn trace_metrics<S: AsRef<str>>(states: &[S], timestamps: Option<&[i64]>) -> Option<TraceMetrics> {
    let mut kept: Vec<&str> = Vec::new();
    let mut times: Vec<i64> = Vec::new();
    for (i, s) in states.iter().enumerate() {
        let s = s.as_ref();
        let ts = timestamps.and_then(|t| t.get(i).copied());
        if kept.last() == Some(&s) {
            if let (Some(t), Some(last)) = (ts, times.last_mut()) {
                *last = t;
            }
            continue;
        }
        kept.push(s);
        if let Some(t) = ts {
            times.push(t);
        }
    }
    if kept.is_empty() {
        return None;
    }
    let programs: Vec<Program> = kept.iter().map(|s| parse(s)).collect();
    let analyzer = Analyzer::default();
    let n = programs.len() as f64;
    let mut features = FeatureMeans {
        keywords: analyzer.keywords().iter().map(|k| (k.clone(), 0.0)).collect(),
        colors: vec![0.0; COLORS.len()],
        comments: 0.0,
        lines: 0.0,
    };
    for p in &programs {
        let f = analyzer.analyze(p);
        for (k, v) in &f.keyword_counts {
            *features.keywords.entry(k.clone()).or_insert(0.0) += *v as f64 / n;
        }
        for (slot, c) in features.colors.iter_mut().zip(&f.color_counts) {
            *slot += *c as f64 / n;
        }
        features.comments += f.comment_count as f64 / n;
        features.lines += f.line_count as f64 / n;
    }
    let mut edit_counts: BTreeMap<EditType, usize> = EditType::ALL.iter().map(|k| (*k, 0)).collect();
    for w in programs.windows(2) {
        if let Ok(kind) = classify_edit(&w[0], &w[1]) {
            *edit_counts.entry(kind).or_insert(0) += 1;
        }
    }
    let duration_seconds = match (times.first(), times.last()) {
        (Some(a), Some(b)) => (b - a).max(0),
        _ => 0,
    };
    Some(TraceMetrics {
        backtracking_ratio: backtracking_ratio(&kept),
        attempts: kept.len(),
        duration_seconds,
        features,
        edit_counts,
        final_execution: execute(programs.last().expect("nonempty"), DEFAULT_STEP_BUDGET),
    })
}

pub fn record_metrics(record: &TraceRecord) -> Option<TraceMetrics> {
    trace_metrics(&record.states(), Some(&record.timestamps()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_state() {
        let m = trace_metrics(&["fd 10"], Some(&[5])).unwrap();
        assert_eq!(m.attempts, 1);
        assert_eq!(m.duration_seconds, 0);
        assert_eq!(m.backtracking_ratio, None);
        assert!(m.final_execution.success);
        assert!(trace_metrics::<&str>(&[], None).is_none());
    }

    #[test]
    fn counts_sum_to_transitions() {
        let states = ["", "pen red", "pen red", "pen red\nfd 10", "pen blue\nfd 10", "pen blue"];
        let m = trace_metrics(&states, Some(&[0, 10, 20, 30, 40, 50])).unwrap();
        assert_eq!(m.attempts, 5);
        assert_eq!(m.edit_counts.values().sum::<usize>(), m.attempts - 1);
        assert_eq!(m.edit_count(EditType::ColorChange), 1);
        assert_eq!(m.deletion_count(), 1);
        assert_eq!(m.duration_seconds, 50);
    }
}
