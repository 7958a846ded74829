use std::collections::HashMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{END_OF_TEXT, MASK, START};

pub const UNK_TOKEN: &str = "<UNK>";
pub const URL_TOKEN: &str = "<URL>";
/// Reserved tokens in id order.
pub const SPECIALS: [&str; 5] = [MASK, START, UNK_TOKEN, URL_TOKEN, END_OF_TEXT];
pub const MASK_ID: u32 = 0;
pub const START_ID: u32 = 1;
pub const EOS_ID: u32 = 4;
const FIRST_BYTE: u32 = SPECIALS.len() as u32;
/// Id of the first learned merge.
pub const FIRST_MERGE: u32 = FIRST_BYTE + 256;

static SPECIAL_PATTERN: LazyLock<Regex> = LazyLock::new(|| {
    let alternatives: Vec<String> = SPECIALS.iter().map(|s| regex::escape(s)).collect();
    Regex::new(&alternatives.join("|")).expect("special token pattern")
});

/// Pieces merges never cross: an optional space with a letter run, digit
/// run or punctuation mark; a newline; other whitespace runs.
static CHUNK_PATTERN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r" ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]|\n|[^\S\n]+").expect("chunk pattern"));

/// Byte-level BPE with reserved special tokens.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(from = "TokenizerFile", into = "TokenizerFile")]
pub struct Tokenizer {
    merges: Vec<(u32, u32)>,
    ranks: HashMap<(u32, u32), u32>,
    pieces: Vec<Vec<u8>>,
}

#[derive(Serialize, Deserialize)]
struct TokenizerFile {
    merges: Vec<(u32, u32)>,
}

impl From<TokenizerFile> for Tokenizer {
    fn from(file: TokenizerFile) -> Self {
        Tokenizer::from_merges(file.merges)
    }
}

impl From<Tokenizer> for TokenizerFile {
    fn from(t: Tokenizer) -> Self {
        TokenizerFile { merges: t.merges }
    }
}

impl PartialEq for Tokenizer {
    fn eq(&self, other: &Self) -> bool {
        self.merges == other.merges
    }
}

fn split_chunks(text: &str) -> impl Iterator<Item = &str> {
    let mut pos = 0;
    let mut pieces = Vec::new();
    for m in CHUNK_PATTERN.find_iter(text) {
        if m.start() > pos {
            pieces.push(&text[pos..m.start()]);
        }
        pieces.push(m.as_str());
        pos = m.end();
    }
    if pos < text.len() {
        pieces.push(&text[pos..]);
    }
    pieces.into_iter()
}

/// Ordinary text spans and special tokens, in order.
enum Segment<'a> {
    Text(&'a str),
    Special(u32),
}

fn segments(text: &str) -> Vec<Segment<'_>> {
    let mut out = Vec::new();
    let mut pos = 0;
    for m in SPECIAL_PATTERN.find_iter(text) {
        if m.start() > pos {
            out.push(Segment::Text(&text[pos..m.start()]));
        }
        let id = SPECIALS.iter().position(|s| *s == m.as_str()).expect("matched a special") as u32;
        out.push(Segment::Special(id));
        pos = m.end();
    }
    if pos < text.len() {
        out.push(Segment::Text(&text[pos..]));
    }
    out
}

fn merge_pair(tokens: &mut Vec<u32>, pair: (u32, u32), id: u32) {
    let mut out = Vec::with_capacity(tokens.len());
    let mut i = 0;
    while i < tokens.len() {
        if i + 1 < tokens.len() && (tokens[i], tokens[i + 1]) == pair {
            out.push(id);
            i += 2;
        } else {
            out.push(tokens[i]);
            i += 1;
        }
    }
    *tokens = out;
}

impl Tokenizer {
    /// Specials and bytes only.
    pub fn bytes_only() -> Self {
        Self::from_merges(Vec::new())
    }

    pub fn from_merges(merges: Vec<(u32, u32)>) -> Self {
        let mut pieces: Vec<Vec<u8>> = SPECIALS.iter().map(|s| s.as_bytes().to_vec()).collect();
        pieces.extend((0..=255u8).map(|b| vec![b]));
        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, &(a, b)) in merges.iter().enumerate() {
            let mut piece = pieces[a as usize].clone();
            piece.extend_from_slice(&pieces[b as usize]);
            pieces.push(piece);
            ranks.insert((a, b), rank as u32);
        }
        Self { merges, ranks, pieces }
    }

    /// Learns merges over `texts` until the vocabulary reaches
    /// `vocab_size` or no pair repeats. Ties go to the smaller pair.
    pub fn train<'a>(texts: impl IntoIterator<Item = &'a str>, vocab_size: usize) -> Self {
        let mut freq: HashMap<&str, u64> = HashMap::new();
        for text in texts {
            for seg in segments(text) {
                if let Segment::Text(t) = seg {
                    for chunk in split_chunks(t) {
                        *freq.entry(chunk).or_insert(0) += 1;
                    }
                }
            }
        }
        let mut words: Vec<(Vec<u32>, u64)> = freq
            .into_iter()
            .map(|(w, c)| (w.bytes().map(|b| FIRST_BYTE + b as u32).collect(), c))
            .collect();
        words.sort();
        let mut merges = Vec::new();
        let budget = vocab_size.saturating_sub(FIRST_MERGE as usize);
        while merges.len() < budget {
            let mut counts: HashMap<(u32, u32), u64> = HashMap::new();
            for (w, c) in &words {
                for pair in w.windows(2) {
                    *counts.entry((pair[0], pair[1])).or_insert(0) += c;
                }
            }
            let best = counts
                .into_iter()
                .filter(|(_, c)| *c >= 2)
                .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then(pb.cmp(pa)));
            let Some((pair, _)) = best else { break };
            let id = FIRST_MERGE + merges.len() as u32;
            for (w, _) in &mut words {
                if w.len() >= 2 {
                    merge_pair(w, pair, id);
                }
            }
            merges.push(pair);
        }
        Self::from_merges(merges)
    }

    pub fn vocab_size(&self) -> usize {
        self.pieces.len()
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    fn encode_chunk(&self, chunk: &str, out: &mut Vec<u32>) {
        let mut tokens: Vec<u32> = chunk.bytes().map(|b| FIRST_BYTE + b as u32).collect();
        while tokens.len() >= 2 {
            let best = tokens
                .windows(2)
                .filter_map(|p| self.ranks.get(&(p[0], p[1])).map(|r| (*r, (p[0], p[1]))))
                .min();
            let Some((rank, pair)) = best else { break };
            merge_pair(&mut tokens, pair, FIRST_MERGE + rank);
        }
        out.extend(tokens);
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::with_capacity(text.len() / 2);
        for seg in segments(text) {
            match seg {
                Segment::Special(id) => out.push(id),
                Segment::Text(t) => {
                    for chunk in split_chunks(t) {
                        self.encode_chunk(chunk, &mut out);
                    }
                }
            }
        }
        out
    }

    pub fn decode_bytes(&self, ids: &[u32]) -> Vec<u8> {
        let mut bytes = Vec::new();
        for &id in ids {
            if let Some(p) = self.pieces.get(id as usize) {
                bytes.extend_from_slice(p);
            }
        }
        bytes
    }

    /// Lossy on token sequences that split a UTF-8 character.
    pub fn decode(&self, ids: &[u32]) -> String {
        String::from_utf8_lossy(&self.decode_bytes(ids)).into_owned()
    }

    pub fn is_special(id: u32) -> bool {
        id < FIRST_BYTE
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SAMPLE: &str = "snowman<mask><mask><start>CODE 1 (2018-10-19 14:12:37):\npen red\nfd 10\n<|endoftext|>";

    #[test]
    fn specials_are_single_tokens() {
        let t = Tokenizer::bytes_only();
        let ids = t.encode(SAMPLE);
        assert_eq!(&ids[7..10], &[MASK_ID, MASK_ID, START_ID]);
        assert_eq!(*ids.last().unwrap(), EOS_ID);
        assert_eq!(t.decode(&ids), SAMPLE);
        assert_eq!(t.encode("write '<UNK>' <URL>")[7], 2);
    }

    #[test]
    fn merges_shorten_and_round_trip() {
        let texts = vec![SAMPLE; 20];
        let t = Tokenizer::train(texts.iter().copied(), 320);
        assert!(t.vocab_size() <= 320 && t.vocab_size() > FIRST_MERGE as usize);
        let ids = t.encode(SAMPLE);
        assert!(ids.len() < Tokenizer::bytes_only().encode(SAMPLE).len());
        assert_eq!(t.decode(&ids), SAMPLE);
        let again = Tokenizer::from_merges(t.merges().to_vec());
        assert_eq!(again.encode(SAMPLE), ids);
        let json = serde_json::to_string(&t).unwrap();
        let back: Tokenizer = serde_json::from_str(&json).unwrap();
        assert_eq!(back.encode(SAMPLE), ids);
    }

    #[test]
    fn merges_never_produce_specials() {
        let texts = vec!["<mask><mask><mask><start>"; 50];
        let t = Tokenizer::train(texts.iter().copied(), 400);
        assert_eq!(t.vocab_size(), FIRST_MERGE as usize);
    }

    #[test]
    fn training_is_deterministic() {
        let texts = ["fd 10\nrt 90\nfd 10\npen blue", "dot red, 30\nfd 10"];
        let a = Tokenizer::train(texts.iter().copied(), 300);
        let b = Tokenizer::train(texts.iter().copied(), 300);
        assert_eq!(a.merges(), b.merges());
    }

    proptest! {
        #[test]
        fn round_trip_any_text(s in "\\PC{0,60}") {
            let texts = [SAMPLE; 5];
            let t = Tokenizer::train(texts.iter().copied(), 300);
            prop_assert_eq!(t.decode(&t.encode(&s)), s);
        }
    }
}
