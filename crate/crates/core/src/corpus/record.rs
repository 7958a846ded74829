use std::io::{BufRead, Write};

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::CorpusError;

const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

/// One saved program state.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    /// Seconds since the Unix epoch (UTC).
    pub ts: i64,
    pub code: String,
}

/// All states one student saved under one title, in time order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub student_id: String,
    pub title: String,
    pub events: Vec<TraceEvent>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub synthetic: bool,
}

impl TraceRecord {
    pub fn new(student_id: impl Into<String>, title: impl Into<String>, events: Vec<TraceEvent>) -> Self {
        Self {
            student_id: student_id.into(),
            title: title.into(),
            events,
            synthetic: false,
        }
    }

    pub fn final_program(&self) -> Option<&str> {
        self.events.last().map(|e| e.code.as_str())
    }

    pub fn states(&self) -> Vec<&str> {
        self.events.iter().map(|e| e.code.as_str()).collect()
    }

    pub fn timestamps(&self) -> Vec<i64> {
        self.events.iter().map(|e| e.ts).collect()
    }

    pub fn duration_seconds(&self) -> i64 {
        match (self.events.first(), self.events.last()) {
            (Some(a), Some(b)) => b.ts - a.ts,
            _ => 0,
        }
    }
}

/// Renders epoch seconds as `YYYY-MM-DD HH:MM:SS` in UTC.
pub fn format_timestamp(ts: i64) -> String {
    DateTime::from_timestamp(ts, 0)
        .map(|dt| dt.format(TIMESTAMP_FORMAT).to_string())
        .unwrap_or_else(|| "0000-00-00 00:00:00".to_string())
}

pub fn parse_timestamp(text: &str) -> Option<i64> {
    NaiveDateTime::parse_from_str(text.trim(), TIMESTAMP_FORMAT)
        .ok()
        .map(|dt| dt.and_utc().timestamp())
}

/// Collapses runs of consecutive identical programs, keeping the last event
/// of each run. Returns `None` when nothing is left.
pub fn dedup(record: &TraceRecord) -> Option<TraceRecord> {
    let mut events: Vec<TraceEvent> = Vec::with_capacity(record.events.len());
    for event in &record.events {
        match events.last_mut() {
            Some(prev) if prev.code == event.code => *prev = event.clone(),
            _ => events.push(event.clone()),
        }
    }
    if events.is_empty() {
        return None;
    }
    Some(TraceRecord {
        events,
        ..record.clone()
    })
}

pub fn write_jsonl<W: Write>(mut out: W, records: &[TraceRecord]) -> Result<(), CorpusError> {
    for record in records {
        serde_json::to_writer(&mut out, record).map_err(|e| CorpusError::Io(e.into()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<TraceRecord>, CorpusError> {
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|source| CorpusError::Json { line: i + 1, source })?;
        records.push(record);
    }
    Ok(records)
}
