use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CorpusError;

/// Largest accepted `|tokens - reference| / reference`.
pub const DOWNSAMPLE_TOLERANCE: f64 = 0.001;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DownsampleOutcome {
    /// Indices of the surviving traces, ascending.
    pub kept: Vec<usize>,
    pub total_tokens: usize,
    pub reference_tokens: usize,
    pub relative_gap: f64,
    /// False when no whole-trace removal lands inside the band; `kept` is
    /// then the closest set found.
    pub within_band: bool,
}

/// Removes whole traces in seeded random order until the token total is
/// within `tolerance` of `reference`.
///
/// Traces whose removal would undershoot the band are skipped. If a full
/// pass still ends above the band, one removed trace is swapped for a kept
/// one when that lands inside it.
pub fn downsample(
    token_counts: &[usize],
    reference: usize,
    tolerance: f64,
    seed: u64,
) -> Result<DownsampleOutcome, CorpusError> {
    let mut total: usize = token_counts.iter().sum();
    if total < reference {
        return Err(CorpusError::InvalidArguments(format!(
            "dataset has {total} tokens, fewer than the reference {reference}"
        )));
    }
    let lower = (reference as f64 * (1.0 - tolerance)).ceil() as usize;
    let upper = (reference as f64 * (1.0 + tolerance)).floor() as usize;

    let mut order: Vec<usize> = (0..token_counts.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut keep = vec![true; token_counts.len()];
    let mut removed = Vec::new();
    for &i in &order {
        if total <= upper {
            break;
        }
        if total - token_counts[i] >= lower {
            keep[i] = false;
            total -= token_counts[i];
            removed.push(i);
        }
    }

    if total > upper {
        let mut kept_sorted: Vec<usize> = (0..token_counts.len()).filter(|&i| keep[i]).collect();
        kept_sorted.sort_by_key(|&i| (token_counts[i], i));
        'swap: for &a in &removed {
            let grown = total + token_counts[a];
            let lo = grown.saturating_sub(upper);
            let hi = grown.saturating_sub(lower);
            let start = kept_sorted.partition_point(|&b| token_counts[b] < lo);
            if let Some(&b) = kept_sorted.get(start) {
                if token_counts[b] <= hi && grown - token_counts[b] >= lower {
                    keep[a] = true;
                    keep[b] = false;
                    total = grown - token_counts[b];
                    break 'swap;
                }
            }
        }
    }

    let kept: Vec<usize> = (0..token_counts.len()).filter(|&i| keep[i]).collect();
    let relative_gap = if reference == 0 {
        if total == 0 { 0.0 } else { f64::INFINITY }
    } else {
        (total as f64 - reference as f64).abs() / reference as f64
    };
    Ok(DownsampleOutcome {
        kept,
        total_tokens: total,
        reference_tokens: reference,
        relative_gap,
        within_band: (lower..=upper).contains(&total),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn sizes(n: usize, seed: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(1..=40)).collect()
    }

    #[test]
    fn lands_in_band() {
        let mut counts = sizes(250, 1);
        let total: usize = counts.iter().sum();
        counts[0] += 5000usize.saturating_sub(total);
        counts[0] = counts[0].max(1);
        let out = downsample(&counts, 1000, DOWNSAMPLE_TOLERANCE, 4).unwrap();
        assert!(out.within_band, "{out:?}");
        assert!((999..=1001).contains(&out.total_tokens));
        let recomputed: usize = out.kept.iter().map(|&i| counts[i]).sum();
        assert_eq!(recomputed, out.total_tokens);
    }

    #[test]
    fn already_in_band_is_unchanged() {
        let counts = vec![500, 500];
        let out = downsample(&counts, 1000, DOWNSAMPLE_TOLERANCE, 0).unwrap();
        assert_eq!(out.kept, vec![0, 1]);
    }

    #[test]
    fn seeded() {
        let counts = sizes(300, 2);
        let a = downsample(&counts, 3000, DOWNSAMPLE_TOLERANCE, 11).unwrap();
        let b = downsample(&counts, 3000, DOWNSAMPLE_TOLERANCE, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unreachable_is_flagged() {
        let out = downsample(&[700, 700], 1000, DOWNSAMPLE_TOLERANCE, 0).unwrap();
        assert!(!out.within_band);
        assert_eq!(out.total_tokens, 1400);
    }

    #[test]
    fn below_reference_is_an_error() {
        assert!(downsample(&[10], 100, DOWNSAMPLE_TOLERANCE, 0).is_err());
    }
}
