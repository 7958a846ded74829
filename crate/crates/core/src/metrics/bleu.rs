use std::collections::HashMap;
use std::sync::LazyLock;

use regex::Regex;

use super::MetricsError;

pub const MAX_ORDER: usize = 4;

static TOKEN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[\p{L}\p{N}_]+|[^\s\p{L}\p{N}_]").expect("token pattern"));

/// Alphanumeric runs and single punctuation characters.
pub fn bleu_tokens(text: &str) -> Vec<&str> {
    TOKEN.find_iter(text).map(|m| m.as_str()).collect()
}

fn ngram_counts<'t, 'a>(tokens: &'t [&'a str], n: usize) -> HashMap<&'t [&'a str], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped matches and candidate n-gram total for one order.
fn clipped(candidate: &[&str], references: &[Vec<&str>], n: usize) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let total = candidate.len().saturating_sub(n - 1);
    let mut max_ref: HashMap<&[&str], usize> = HashMap::new();
    for r in references {
        for (gram, count) in ngram_counts(r, n) {
            let slot = max_ref.entry(gram).or_insert(0);
            *slot = (*slot).max(count);
        }
    }
    let matches = cand
        .iter()
        .map(|(gram, count)| (*count).min(max_ref.get(gram).copied().unwrap_or(0)))
        .sum();
    (matches, total)
}

fn score(candidate: &[&str], references: &[Vec<&str>]) -> f64 {
    if candidate.is_empty() {
        return if references.iter().any(|r| r.is_empty()) { 1.0 } else { 0.0 };
    }
    let c = candidate.len();
    // Closest reference length, shorter on ties.
    let r = references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| (len.abs_diff(c), len))
        .unwrap_or(0);
    let brevity = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };

    let mut log_sum = 0.0;
    let mut total = 0.0;
    for n in 1..=MAX_ORDER {
        let (m, t) = clipped(candidate, references, n);
        let precision = if n == 1 {
            if m == 0 {
                return 0.0;
            }
            m as f64 / t as f64
        } else if m == 0 {
            1.0 / (t as f64 + 1.0)
        } else {
            m as f64 / t as f64
        };
        log_sum += precision.ln();
        total += brevity * (log_sum / n as f64).exp();
    }
    total / MAX_ORDER as f64
}

/// Mean of BLEU-1 through BLEU-4 of `candidate` against `reference`.
///
/// BLEU-n is the brevity penalty times the geometric mean of the clipped
/// 1..n-gram precisions. Orders above one with no match use add-one
/// smoothing; no unigram match gives 0.
pub fn bleu(candidate: &str, reference: &str) -> f64 {
    bleu_multi(candidate, &[reference])
}

/// BLEU against several references with per-n-gram max clipping and the
/// closest reference length for the brevity penalty.
pub fn bleu_multi<S: AsRef<str>>(candidate: &str, references: &[S]) -> f64 {
    let cand = bleu_tokens(candidate);
    let refs: Vec<Vec<&str>> = references.iter().map(|r| bleu_tokens(r.as_ref())).collect();
    score(&cand, &refs)
}

/// Mean BLEU of each sample against all others as references.
pub fn self_bleu<S: AsRef<str>>(samples: &[S]) -> Result<f64, MetricsError> {
    if samples.len() < 2 {
        return Err(MetricsError::TooFewSamples(samples.len()));
    }
    let tokens: Vec<Vec<&str>> = samples.iter().map(|s| bleu_tokens(s.as_ref())).collect();
    let total: f64 = (0..tokens.len())
        .map(|i| {
            let others: Vec<Vec<&str>> =
                tokens.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, t)| t.clone()).collect();
            score(&tokens[i], &others)
        })
        .sum();
    Ok(total / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn tokenization() {
        assert_eq!(bleu_tokens("dot red, 30\n# hi!"), vec!["dot", "red", ",", "30", "#", "hi", "!"]);
    }

    #[test]
    fn identity_and_disjoint() {
        assert_abs_diff_eq!(bleu("pen red\nfd 10", "pen red\nfd 10"), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(bleu("x", "x"), 1.0, epsilon = 1e-12);
        assert_eq!(bleu("aa bb", "cc dd"), 0.0);
        assert_eq!(bleu("", "fd 1"), 0.0);
    }

    #[test]
    fn short_candidate_is_penalized() {
        // Every precision is one; only the brevity penalty exp(1 - 6/4) remains.
        let expected = (-0.5f64).exp();
        assert_abs_diff_eq!(bleu("pen red\nfd 10", "pen red\nfd 10\nrt 90"), expected, epsilon = 1e-12);
    }

    #[test]
    fn self_bleu_bounds() {
        assert_abs_diff_eq!(self_bleu(&["a b", "a b", "a b"]).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(self_bleu(&["a", "b", "c"]).unwrap(), 0.0);
        assert!(self_bleu(&["a"]).is_err());
    }
}
