//! Synthetic traces fabricated from a final program alone.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{TraceEvent, TraceRecord};

/// Share of random-walk moves that insert lines.
pub const INSERT_BIAS: f64 = 0.7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    Append,
    Complex,
}

/// Top-level instructions, each with its indented body and any blank lines
/// that follow it.
pub fn instruction_units(program: &str) -> Vec<Vec<&str>> {
    let mut units: Vec<Vec<&str>> = Vec::new();
    for line in program.lines() {
        let top_level = !line.trim().is_empty() && !line.starts_with([' ', '\t']);
        match units.last_mut() {
            Some(unit) if !top_level => unit.push(line),
            _ => units.push(vec![line]),
        }
    }
    units
}

/// Growing prefixes of `final_program`, one instruction unit at a time.
///
/// With `n` units and `m = min(n, budget)` states, state `i` (1-based)
/// holds the first `ceil(i * n / m)` units, so the last state is the whole
/// program.
pub fn synth_append(final_program: &str, budget: usize) -> Vec<String> {
    let units = instruction_units(final_program);
    let n = units.len();
    if n == 0 || budget == 0 {
        return vec![final_program.to_string()];
    }
    let m = n.min(budget);
    (1..=m)
        .map(|i| {
            let k = (i * n).div_ceil(m);
            units[..k].concat().join("\n")
        })
        .collect()
}

/// A seeded walk of line insertions and deletions that ends at
/// `final_program` within `budget` states.
///
/// States are subsequences of the final lines. Each move inserts one to
/// three missing lines with probability [`INSERT_BIAS`] and otherwise
/// deletes one or two present lines; the last available state jumps to the
/// final program.
pub fn synth_complex(final_program: &str, budget: usize, seed: u64) -> Vec<String> {
    let lines: Vec<&str> = final_program.lines().collect();
    let n = lines.len();
    if budget <= 1 || n <= 1 {
        return vec![final_program.to_string()];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let render = |present: &BTreeSet<usize>| present.iter().map(|&i| lines[i]).collect::<Vec<_>>().join("\n");
    let mut present: BTreeSet<usize> = BTreeSet::new();
    let mut states = Vec::new();
    while states.len() + 1 < budget && present.len() < n {
        let missing: Vec<usize> = (0..n).filter(|i| !present.contains(i)).collect();
        if present.is_empty() || rng.random_bool(INSERT_BIAS) {
            let k = rng.random_range(1..=3).min(missing.len());
            for j in sample(&mut rng, missing.len(), k) {
                present.insert(missing[j]);
            }
        } else {
            let have: Vec<usize> = present.iter().copied().collect();
            let k = rng.random_range(1..=2).min(have.len());
            for j in sample(&mut rng, have.len(), k) {
                present.remove(&have[j]);
            }
        }
        let state = render(&present);
        if present.len() < n && states.last() != Some(&state) {
            states.push(state);
        }
    }
    states.push(final_program.to_string());
    states
}

/// Timestamps spread evenly between the first and last original times.
fn interpolate(first: i64, last: i64, count: usize) -> Vec<i64> {
    match count {
        0 => Vec::new(),
        1 => vec![last],
        _ => (0..count)
            .map(|i| first + ((last - first) as f64 * i as f64 / (count - 1) as f64).round() as i64)
            .collect(),
    }
}

/// A synthetic counterpart of `record`: same student and title, states
/// fabricated from its final program, no longer than the original.
pub fn synth_record(record: &TraceRecord, kind: SynthKind, seed: u64) -> Option<TraceRecord> {
    let final_program = record.final_program()?;
    let budget = record.events.len();
    let states = match kind {
        SynthKind::Append => synth_append(final_program, budget),
        SynthKind::Complex => synth_complex(final_program, budget, seed),
    };
    let first = record.events.first()?.ts;
    let last = record.events.last()?.ts;
    let times = interpolate(first, last, states.len());
    let events = states
        .into_iter()
        .zip(times)
        .map(|(code, ts)| TraceEvent { ts, code })
        .collect();
    let mut out = TraceRecord::new(record.student_id.clone(), record.title.clone(), events);
    out.synthetic = true;
    Some(out)
}
