use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::record::{format_timestamp, TraceEvent, TraceRecord};
use super::CorpusError;

pub const MASK: &str = "<mask>";
pub const START: &str = "<start>";
pub const END_OF_TEXT: &str = "<|endoftext|>";
/// Positions reserved for the title and its mask padding, in byte-level units.
pub const HEADER_BUDGET: usize = 50;
pub const TITLE_MASK_RATE: f64 = 0.15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SerializeOptions {
    pub header_budget: usize,
}

impl Default for SerializeOptions {
    fn default() -> Self {
        Self {
            header_budget: HEADER_BUDGET,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SerializedExample {
    pub text: String,
    pub student_id: String,
    pub title_masked: bool,
}

fn truncate_bytes(s: &str, max: usize) -> &str {
    if s.len() <= max {
        return s;
    }
    let mut end = max;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    &s[..end]
}

impl SerializeOptions {
    /// `title<mask>...<mask><start>`, or only masks when the title is hidden.
    pub fn header(&self, title: &str, mask_title: bool) -> String {
        let shown = if mask_title {
            ""
        } else {
            truncate_bytes(title, self.header_budget)
        };
        let pad = self.header_budget - shown.len();
        let mut out = String::with_capacity(shown.len() + pad * MASK.len() + START.len());
        out.push_str(shown);
        for _ in 0..pad {
            out.push_str(MASK);
        }
        out.push_str(START);
        out
    }
}

/// `CODE i (YYYY-MM-DD HH:MM:SS):\n`
pub fn state_header(index: usize, ts: i64) -> String {
    format!("CODE {index} ({}):\n", format_timestamp(ts))
}

fn push_states(out: &mut String, events: &[TraceEvent]) {
    for (i, event) in events.iter().enumerate() {
        out.push_str(&state_header(i + 1, event.ts));
        out.push_str(&event.code);
        out.push('\n');
    }
}

/// Serializes a whole trace, terminated by the end-of-text token.
pub fn serialize(record: &TraceRecord, mask_title: bool, opts: &SerializeOptions) -> SerializedExample {
    let mut text = opts.header(&record.title, mask_title);
    push_states(&mut text, &record.events);
    text.push_str(END_OF_TEXT);
    SerializedExample {
        text,
        student_id: record.student_id.clone(),
        title_masked: mask_title,
    }
}

/// The first `t` states of a trace without the end-of-text token. With
/// `t == 0` the text ends in the first state's bare `CODE 1` header, the
/// empty initial program.
pub fn serialize_prefix(record: &TraceRecord, t: usize, mask_title: bool, opts: &SerializeOptions) -> String {
    let mut text = opts.header(&record.title, mask_title);
    let t = t.min(record.events.len());
    push_states(&mut text, &record.events[..t]);
    if t == 0 {
        if let Some(first) = record.events.first() {
            text.push_str(&state_header(1, first.ts));
        }
    }
    text
}

/// Only the final program, indexed `CODE 1`. Empty final programs are
/// dropped.
pub fn last_state_view(record: &TraceRecord, mask_title: bool, opts: &SerializeOptions) -> Option<SerializedExample> {
    let last = record.events.last()?;
    if last.code.trim().is_empty() {
        return None;
    }
    let single = TraceRecord {
        events: vec![last.clone()],
        ..record.clone()
    };
    Some(serialize(&single, mask_title, opts))
}

/// Serializes full traces, hiding each title independently with
/// probability `mask_rate`.
pub fn build_examples(
    records: &[TraceRecord],
    mask_rate: f64,
    seed: u64,
    opts: &SerializeOptions,
) -> Vec<SerializedExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    records
        .iter()
        .map(|r| serialize(r, rng.random_bool(mask_rate.clamp(0.0, 1.0)), opts))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedState {
    pub index: usize,
    pub timestamp: String,
    pub program: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedTrace {
    /// `None` when the header is all mask tokens.
    pub title: Option<String>,
    pub states: Vec<ParsedState>,
    pub eos: bool,
}

fn code_marker(index: usize) -> String {
    format!("CODE {index} (")
}

/// Inverse of [`serialize`]: recovers the title and every indexed state.
pub fn parse_serialized(text: &str) -> Result<ParsedTrace, CorpusError> {
    let start = text
        .find(START)
        .ok_or_else(|| CorpusError::Malformed("missing <start>".into()))?;
    let title = text[..start].replace(MASK, "");
    let title = (!title.is_empty()).then_some(title);
    let (body, eos) = match text[start + START.len()..].strip_suffix(END_OF_TEXT) {
        Some(body) => (body, true),
        None => (&text[start + START.len()..], false),
    };
    let mut states = Vec::new();
    let mut rest = body;
    let mut index = 1;
    while !rest.is_empty() {
        let marker = code_marker(index);
        let after = rest
            .strip_prefix(marker.as_str())
            .ok_or_else(|| CorpusError::Malformed(format!("expected `{marker}`")))?;
        let close = after
            .find("):\n")
            .ok_or_else(|| CorpusError::Malformed(format!("unterminated header for state {index}")))?;
        let timestamp = after[..close].to_string();
        let program_and_rest = &after[close + 3..];
        let next = format!("\n{}", code_marker(index + 1));
        let (program, remainder) = match program_and_rest.find(&next) {
            Some(pos) => (&program_and_rest[..pos], &program_and_rest[pos + 1..]),
            None => {
                let program = program_and_rest
                    .strip_suffix('\n')
                    .ok_or_else(|| CorpusError::Malformed(format!("state {index} lacks a newline")))?;
                (program, "")
            }
        };
        states.push(ParsedState {
            index,
            timestamp,
            program: program.to_string(),
        });
        rest = remainder;
        index += 1;
    }
    Ok(ParsedTrace { title, states, eos })
}

#[cfg(test)]
mod tests {
    use super::super::record::parse_timestamp;
    use super::*;

    fn snowman() -> TraceRecord {
        TraceRecord::new(
            "s1",
            "snowman",
            vec![TraceEvent {
                ts: parse_timestamp("2018-10-19 14:12:37").unwrap(),
                code: "fd 20".into(),
            }],
        )
    }

    #[test]
    fn template_for_single_event() {
        let ex = serialize(&snowman(), false, &SerializeOptions::default());
        let expected = format!(
            "snowman{}<start>CODE 1 (2018-10-19 14:12:37):\nfd 20\n<|endoftext|>",
            MASK.repeat(43)
        );
        assert_eq!(ex.text, expected);
        assert!(!ex.title_masked);
    }

    #[test]
    fn masked_header_is_all_masks() {
        let ex = serialize(&snowman(), true, &SerializeOptions::default());
        assert!(ex.text.starts_with(&format!("{}<start>", MASK.repeat(50))));
        assert!(!ex.text.contains("snowman"));
        assert_eq!(parse_serialized(&ex.text).unwrap().title, None);
    }

    #[test]
    fn indices_increase() {
        let mut r = snowman();
        r.events.push(TraceEvent {
            ts: r.events[0].ts + 5,
            code: "fd 20\nrt 90".into(),
        });
        let text = serialize(&r, false, &SerializeOptions::default()).text;
        let one = text.find("CODE 1 (").unwrap();
        let two = text.find("CODE 2 (").unwrap();
        assert!(one < two);
        let parsed = parse_serialized(&text).unwrap();
        assert_eq!(parsed.states.len(), 2);
        assert_eq!(parsed.states[1].program, "fd 20\nrt 90");
        assert_eq!(parsed.states[1].timestamp, "2018-10-19 14:12:42");
        assert!(parsed.eos);
    }

    #[test]
    fn long_titles_truncate() {
        let opts = SerializeOptions::default();
        let header = opts.header(&"x".repeat(80), false);
        assert_eq!(header, format!("{}<start>", "x".repeat(50)));
    }

    #[test]
    fn last_state_view_rules() {
        let opts = SerializeOptions::default();
        let one = snowman();
        assert_eq!(last_state_view(&one, false, &opts).unwrap(), serialize(&one, false, &opts));

        let mut three = snowman();
        for (i, code) in ["fd 20\nrt 9", "pen red"].iter().enumerate() {
            three.events.push(TraceEvent {
                ts: 100 + i as i64,
                code: code.to_string(),
            });
        }
        let view = last_state_view(&three, false, &opts).unwrap();
        let parsed = parse_serialized(&view.text).unwrap();
        assert_eq!(parsed.states.len(), 1);
        assert_eq!(parsed.states[0].program, "pen red");

        three.events.last_mut().unwrap().code = "  ".into();
        assert!(last_state_view(&three, false, &opts).is_none());
    }

    #[test]
    fn prefix_zero_is_bare_header() {
        let opts = SerializeOptions::default();
        let text = serialize_prefix(&snowman(), 0, false, &opts);
        assert!(text.ends_with("<start>CODE 1 (2018-10-19 14:12:37):\n"));
        let full = serialize_prefix(&snowman(), 1, false, &opts);
        assert!(full.ends_with("fd 20\n"));
    }

    #[test]
    fn masking_rate_is_seeded() {
        let records = vec![snowman(); 400];
        let opts = SerializeOptions::default();
        let a = build_examples(&records, TITLE_MASK_RATE, 7, &opts);
        let b = build_examples(&records, TITLE_MASK_RATE, 7, &opts);
        assert_eq!(a, b);
        let masked = a.iter().filter(|e| e.title_masked).count();
        assert!((30..=90).contains(&masked), "{masked}");
    }
}
