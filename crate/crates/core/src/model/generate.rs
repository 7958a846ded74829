use std::sync::LazyLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::lm::LanguageModel;
use super::linalg::softmax_in_place;
use super::tokenizer::{EOS_ID, START_ID};
use super::ModelError;
use crate::corpus::{parse_timestamp, END_OF_TEXT};

/// Default nucleus mass.
pub const TOP_P: f64 = 0.9;
/// Total generation rounds, counting the first.
pub const MAX_ROUNDS: usize = 3;

/// One sampled continuation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generation {
    pub prefix: String,
    /// Generated text only, stitched across rounds.
    pub text: String,
    pub reached_eos: bool,
    pub seed: u64,
}

impl Generation {
    pub fn full_text(&self) -> String {
        format!("{}{}", self.prefix, self.text)
    }
}

/// The smallest set of tokens, most probable first (ties to the lower id),
/// whose mass reaches `p`, renormalized.
pub fn nucleus(probs: &[f64], p: f64) -> Vec<(u32, f64)> {
    let mut order: Vec<u32> = (0..probs.len() as u32).collect();
    order.sort_by(|&a, &b| probs[b as usize].total_cmp(&probs[a as usize]).then(a.cmp(&b)));
    let mut kept = Vec::new();
    let mut mass = 0.0;
    for id in order {
        mass += probs[id as usize];
        kept.push((id, probs[id as usize]));
        if mass >= p {
            break;
        }
    }
    kept.iter_mut().for_each(|(_, q)| *q /= mass);
    kept
}

fn draw<R: Rng>(set: &[(u32, f64)], rng: &mut R) -> u32 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(id, q) in set {
        acc += q;
        if u < acc {
            return id;
        }
    }
    set.last().expect("nonempty nucleus").0
}

/// How the next token is chosen.
#[derive(Clone, Copy, Debug)]
enum Strategy {
    Nucleus(f64),
    Greedy,
}

fn argmax(logits: &[f64]) -> u32 {
    let mut best = 0;
    for (i, v) in logits.iter().enumerate() {
        if *v > logits[best] {
            best = i;
        }
    }
    best as u32
}

fn generate(
    model: &LanguageModel,
    prefix: &str,
    student_id: Option<&str>,
    strategy: Strategy,
    seed: u64,
) -> Result<Generation, ModelError> {
    let context = model.config.context;
    let prompt = model.tokenizer.encode(prefix);
    if prompt.len() >= context {
        return Err(ModelError::PrefixTooLong { tokens: prompt.len(), context });
    }
    let header_len = prompt.iter().position(|&t| t == START_ID).map_or(0, |p| p + 1);
    let header = &prompt[..header_len];
    let mut body: Vec<u32> = prompt[header_len..].to_vec();
    let mut generated = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reached_eos = false;
    let tail = (context / 2).max(1);
    'rounds: for round in 0..MAX_ROUNDS {
        let mut input = header.to_vec();
        if round == 0 {
            input.extend_from_slice(&body);
        } else {
            let keep = tail.min(context.saturating_sub(header.len() + 1));
            input.extend_from_slice(&body[body.len().saturating_sub(keep)..]);
        }
        let (mut dec, mut hidden) = model.decoder(student_id);
        for &t in &input {
            hidden = dec.push(model.token_embedding(t));
        }
        loop {
            let mut logits = dec.logits(&hidden);
            let next = match strategy {
                Strategy::Greedy => argmax(&logits),
                Strategy::Nucleus(p) => {
                    softmax_in_place(&mut logits);
                    draw(&nucleus(&logits, p), &mut rng)
                }
            };
            if next == EOS_ID {
                reached_eos = true;
                break 'rounds;
            }
            generated.push(next);
            body.push(next);
            if dec.len() == dec.capacity() {
                break;
            }
            hidden = dec.push(model.token_embedding(next));
        }
    }
    let mut text = model.tokenizer.decode(&generated);
    if reached_eos {
        text.push_str(END_OF_TEXT);
    }
    Ok(Generation { prefix: prefix.to_string(), text, reached_eos, seed })
}

/// Nucleus sampling with up to [`MAX_ROUNDS`] rounds. When the context fills
/// without end-of-text, the next round is prompted with the title header
/// and the last half-context of text.
pub fn sample(
    model: &LanguageModel,
    prefix: &str,
    student_id: Option<&str>,
    top_p: f64,
    seed: u64,
) -> Result<Generation, ModelError> {
    if !(top_p > 0.0 && top_p <= 1.0) {
        return Err(ModelError::InvalidArgument(format!("nucleus mass must be in (0, 1], got {top_p}")));
    }
    generate(model, prefix, student_id, Strategy::Nucleus(top_p), seed)
}

/// Argmax decoding, ties to the lower id.
pub fn greedy(model: &LanguageModel, prefix: &str, student_id: Option<&str>) -> Result<Generation, ModelError> {
    generate(model, prefix, student_id, Strategy::Greedy, 0)
}

static STATE_HEADER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"CODE \d+ \(([^)\n]*)\):\n").expect("state header pattern"));

/// Program states recovered from generated text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedGeneration {
    /// Complete states in order.
    pub states: Vec<String>,
    /// Header time of each state, when it parses.
    pub timestamps: Vec<Option<i64>>,
    pub reached_eos: bool,
}

impl ParsedGeneration {
    /// No complete state was found.
    pub fn is_degenerate(&self) -> bool {
        self.states.is_empty()
    }

    /// The last complete state; in strict mode, only for generations that
    /// reached end-of-text.
    pub fn final_state(&self, strict: bool) -> Option<&str> {
        if strict && !self.reached_eos {
            return None;
        }
        self.states.last().map(String::as_str)
    }
}

/// Splits text on `CODE i (timestamp):` headers. Text after end-of-text is
/// ignored; without end-of-text the trailing state is treated as partial
/// and dropped.
pub fn parse_generation(text: &str) -> ParsedGeneration {
    let (body, reached_eos) = match text.find(END_OF_TEXT) {
        Some(i) => (&text[..i], true),
        None => (text, false),
    };
    let headers: Vec<_> = STATE_HEADER.captures_iter(body).collect();
    let mut states: Vec<String> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let end = headers.get(i + 1).map_or(body.len(), |n| n.get(0).expect("match").start());
            let s = &body[h.get(0).expect("match").end()..end];
            s.strip_suffix('\n').unwrap_or(s).to_string()
        })
        .collect();
    let mut timestamps: Vec<Option<i64>> = headers.iter().map(|h| parse_timestamp(&h[1])).collect();
    if !reached_eos {
        states.pop();
        timestamps.pop();
    }
    ParsedGeneration { states, timestamps, reached_eos }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Tokenizer};

    #[test]
    fn nucleus_keeps_the_smallest_covering_set() {
        let probs = [0.1, 0.5, 0.3, 0.1];
        let set = nucleus(&probs, 0.75);
        assert_eq!(set.iter().map(|(i, _)| *i).collect::<Vec<_>>(), vec![1, 2]);
        let total: f64 = set.iter().map(|(_, q)| q).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(nucleus(&probs, 1e-12), vec![(1, 1.0)]);
        assert_eq!(nucleus(&[0.25; 4], 0.1)[0].0, 0);
        assert_eq!(nucleus(&probs, 1.0).len(), 4);
    }

    #[test]
    fn parsing_rules() {
        let p = parse_generation("CODE 1 (2020-01-01 00:00:00):\nfd 1\nCODE 2 (2020-01-01 00:00:09):\nfd 1\nrt 9");
        assert_eq!(p.states, vec!["fd 1"]);
        assert_eq!(p.timestamps, vec![parse_timestamp("2020-01-01 00:00:00")]);
        assert!(!p.reached_eos);
        assert_eq!(p.final_state(false), Some("fd 1"));
        assert_eq!(p.final_state(true), None);
        let p = parse_generation("CODE 1 (…):\nfd 1\nCODE 2 (…):\nfd 1\nrt 9\n<|endoftext|>junk");
        assert_eq!(p.states, vec!["fd 1", "fd 1\nrt 9"]);
        assert_eq!(p.timestamps, vec![None, None]);
        assert!(p.reached_eos);
        assert!(parse_generation("garbage").is_degenerate());
        assert!(parse_generation("CODE 1 (x):\nfd").is_degenerate());
    }

    fn model() -> LanguageModel {
        LanguageModel::new(ModelConfig::tiny(), Tokenizer::bytes_only(), 11).unwrap()
    }

    #[test]
    fn sampling_is_seeded() {
        let m = model();
        let a = sample(&m, "t<mask><start>CODE 1 (x):\n", None, 0.9, 5).unwrap();
        let b = sample(&m, "t<mask><start>CODE 1 (x):\n", None, 0.9, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.reached_eos || m.tokenizer.encode(&a.text).len() > 64);
    }

    #[test]
    fn vanishing_mass_is_greedy() {
        let m = model();
        let prefix = "fd<mask><start>CODE 1 (x):\n";
        let g = greedy(&m, prefix, None).unwrap();
        let s = sample(&m, prefix, None, 1e-12, 99).unwrap();
        assert_eq!(g.text, s.text);
    }

    #[test]
    fn overlong_prefix_is_rejected() {
        let m = model();
        assert!(matches!(sample(&m, &"a".repeat(64), None, 0.9, 0), Err(ModelError::PrefixTooLong { .. })));
        assert!(matches!(sample(&m, "a", None, 0.0, 0), Err(ModelError::InvalidArgument(_))));
    }
}
