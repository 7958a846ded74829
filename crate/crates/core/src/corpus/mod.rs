//! Trace records and everything that turns them into training text.

mod chunk;
mod downsample;
mod pii;
mod record;
mod serialize;
mod splits;

pub use chunk::{chunk, chunk_ranges};
pub use downsample::{downsample, DownsampleOutcome, DOWNSAMPLE_TOLERANCE};
pub use pii::{scrub_pii, scrub_record, title_mentions_name};
pub use record::{
    dedup, format_timestamp, parse_timestamp, read_jsonl, write_jsonl, TraceEvent, TraceRecord,
};
pub use serialize::{
    build_examples, last_state_view, parse_serialized, serialize, serialize_prefix, state_header, ParsedState,
    ParsedTrace, SerializeOptions, SerializedExample, END_OF_TEXT, HEADER_BUDGET, MASK,
    TITLE_MASK_RATE, START,
};
pub use splits::{make_splits, read_split_manifest, write_split_manifest, SplitAssignment, SplitLabel};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid arguments: {0}")]
    InvalidArguments(String),
    #[error("malformed serialized trace: {0}")]
    Malformed(String),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
