use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::record::TraceRecord;
use super::CorpusError;

pub const HELDOUT_FRACTION: f64 = 0.02;
pub const TRAIN_FRACTION: f64 = 0.8;
const MIN_DISTINCT: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitLabel {
    Train,
    SeenSeen,
    SeenUnseen,
    UnseenSeen,
    UnseenUnseen,
    /// Test-pool records whose student or title never made it into train.
    HeldoutUnused,
}

impl SplitLabel {
    pub const ALL: [SplitLabel; 6] = [
        SplitLabel::Train,
        SplitLabel::SeenSeen,
        SplitLabel::SeenUnseen,
        SplitLabel::UnseenSeen,
        SplitLabel::UnseenUnseen,
        SplitLabel::HeldoutUnused,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitLabel::Train => "train",
            SplitLabel::SeenSeen => "seen-seen",
            SplitLabel::SeenUnseen => "seen-unseen",
            SplitLabel::UnseenSeen => "unseen-seen",
            SplitLabel::UnseenUnseen => "unseen-unseen",
            SplitLabel::HeldoutUnused => "heldout-unused",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.as_str() == s)
    }
}

impl std::fmt::Display for SplitLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    /// One label per input record, same order.
    pub labels: Vec<SplitLabel>,
    pub heldout_students: BTreeSet<String>,
    pub heldout_titles: BTreeSet<String>,
}

impl SplitAssignment {
    pub fn indices(&self, label: SplitLabel) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == label)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn select<'a>(&self, records: &'a [TraceRecord], label: SplitLabel) -> Vec<&'a TraceRecord> {
        self.indices(label).into_iter().map(|i| &records[i]).collect()
    }
}

fn holdout(mut items: Vec<String>, rng: &mut ChaCha8Rng) -> BTreeSet<String> {
    items.sort();
    items.dedup();
    let n = (items.len() as f64 * HELDOUT_FRACTION).round() as usize;
    items.shuffle(rng);
    items.into_iter().take(n).collect()
}

/// Holds out 2% of students and 2% of titles, trains on 80% of the rest and
/// labels every remaining record with its test split.
pub fn make_splits(records: &[TraceRecord], seed: u64) -> Result<SplitAssignment, CorpusError> {
    let students: Vec<String> = records.iter().map(|r| r.student_id.clone()).collect();
    let titles: Vec<String> = records.iter().map(|r| r.title.clone()).collect();
    let n_students = students.iter().collect::<BTreeSet<_>>().len();
    let n_titles = titles.iter().collect::<BTreeSet<_>>().len();
    if n_students < MIN_DISTINCT || n_titles < MIN_DISTINCT {
        return Err(CorpusError::InvalidArguments(format!(
            "splits need at least {MIN_DISTINCT} students and titles, got {n_students} and {n_titles}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let heldout_students = holdout(students, &mut rng);
    let heldout_titles = holdout(titles, &mut rng);

    let mut pool: Vec<usize> = (0..records.len())
        .filter(|&i| {
            !heldout_students.contains(&records[i].student_id) && !heldout_titles.contains(&records[i].title)
        })
        .collect();
    pool.shuffle(&mut rng);
    let n_train = (pool.len() as f64 * TRAIN_FRACTION).round() as usize;
    let mut labels = vec![SplitLabel::HeldoutUnused; records.len()];
    for &i in &pool[..n_train] {
        labels[i] = SplitLabel::Train;
    }
    let train_students: BTreeSet<&str> = pool[..n_train].iter().map(|&i| records[i].student_id.as_str()).collect();
    let train_titles: BTreeSet<&str> = pool[..n_train].iter().map(|&i| records[i].title.as_str()).collect();

    for (i, record) in records.iter().enumerate() {
        if labels[i] == SplitLabel::Train {
            continue;
        }
        let student_out = heldout_students.contains(&record.student_id);
        let title_out = heldout_titles.contains(&record.title);
        let student_seen = train_students.contains(record.student_id.as_str());
        let title_seen = train_titles.contains(record.title.as_str());
        labels[i] = match (student_out, title_out) {
            (false, false) if student_seen && title_seen => SplitLabel::SeenSeen,
            (false, true) if student_seen => SplitLabel::SeenUnseen,
            (true, false) if title_seen => SplitLabel::UnseenSeen,
            (true, true) => SplitLabel::UnseenUnseen,
            _ => SplitLabel::HeldoutUnused,
        };
    }
    Ok(SplitAssignment {
        labels,
        heldout_students,
        heldout_titles,
    })
}

/// CSV with header `record_id,label`; record ids are corpus line indices.
pub fn write_split_manifest<W: Write>(mut out: W, splits: &SplitAssignment) -> Result<(), CorpusError> {
    writeln!(out, "record_id,label")?;
    for (i, label) in splits.labels.iter().enumerate() {
        writeln!(out, "{i},{label}")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads the labels of a manifest; held-out sets are not stored and come
/// back empty.
pub fn read_split_manifest<R: BufRead>(input: R) -> Result<Vec<SplitLabel>, CorpusError> {
    let mut labels = Vec::new();
    for (n, line) in input.lines().enumerate().skip(1) {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, label) = line
            .split_once(',')
            .ok_or_else(|| CorpusError::Malformed(format!("manifest line {}: expected two fields", n + 1)))?;
        let id: usize = id
            .trim()
            .parse()
            .map_err(|_| CorpusError::Malformed(format!("manifest line {}: bad record id", n + 1)))?;
        let label = SplitLabel::parse(label.trim())
            .ok_or_else(|| CorpusError::Malformed(format!("manifest line {}: unknown label", n + 1)))?;
        if id != labels.len() {
            return Err(CorpusError::Malformed(format!("manifest line {}: ids must be sequential", n + 1)));
        }
        labels.push(label);
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::super::record::TraceEvent;
    use super::*;

    fn grid(students: usize, titles: usize) -> Vec<TraceRecord> {
        let mut out = Vec::new();
        for s in 0..students {
            for t in 0..titles {
                if (s + t) % 3 == 0 {
                    out.push(TraceRecord::new(
                        format!("s{s}"),
                        format!("t{t}"),
                        vec![TraceEvent { ts: 0, code: "fd 1".into() }],
                    ));
                }
            }
        }
        out
    }

    #[test]
    fn two_percent_rule() {
        let records = grid(100, 100);
        let s = make_splits(&records, 1).unwrap();
        assert_eq!(s.heldout_students.len(), 2);
        assert_eq!(s.heldout_titles.len(), 2);
    }

    #[test]
    fn deterministic_under_seed() {
        let records = grid(60, 70);
        assert_eq!(make_splits(&records, 9).unwrap(), make_splits(&records, 9).unwrap());
        assert_ne!(make_splits(&records, 9).unwrap().labels, make_splits(&records, 10).unwrap().labels);
    }

    #[test]
    fn labels_follow_holdouts() {
        let records = grid(100, 100);
        let s = make_splits(&records, 3).unwrap();
        let train: Vec<&TraceRecord> = s.select(&records, SplitLabel::Train);
        let n_train = train.len();
        let pool = records
            .iter()
            .filter(|r| !s.heldout_students.contains(&r.student_id) && !s.heldout_titles.contains(&r.title))
            .count();
        assert_eq!(n_train, (pool as f64 * 0.8).round() as usize);
        for (r, label) in records.iter().zip(&s.labels) {
            let so = s.heldout_students.contains(&r.student_id);
            let to = s.heldout_titles.contains(&r.title);
            match label {
                SplitLabel::UnseenSeen => assert!(so && !to),
                SplitLabel::SeenUnseen => assert!(!so && to),
                SplitLabel::UnseenUnseen => assert!(so && to),
                SplitLabel::SeenSeen | SplitLabel::Train => assert!(!so && !to),
                SplitLabel::HeldoutUnused => {}
            }
            if matches!(label, SplitLabel::UnseenSeen | SplitLabel::UnseenUnseen) {
                assert!(train.iter().all(|t| t.student_id != r.student_id));
            }
        }
        assert!(!s.indices(SplitLabel::UnseenSeen).is_empty());
    }

    #[test]
    fn too_few_students_is_rejected() {
        assert!(make_splits(&grid(10, 100), 0).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let records = grid(60, 60);
        let s = make_splits(&records, 2).unwrap();
        let mut buf = Vec::new();
        write_split_manifest(&mut buf, &s).unwrap();
        assert!(buf.starts_with(b"record_id,label\n0,"));
        assert_eq!(read_split_manifest(buf.as_slice()).unwrap(), s.labels);
    }
}
