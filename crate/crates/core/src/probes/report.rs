use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::datasets::shuffle_embeddings;
use super::mlp::{MlpProbe, MlpProbeConfig};
use super::ridge::RidgeFit;
use super::{ProbeDataset, ProbeError, ProbeTask};
use crate::metrics::{mean, pearson_or_zero, sem};

pub const N_SPLITS: usize = 5;
pub const TEST_FRACTION: f64 = 0.2;
/// Smallest dataset a probe is fitted on.
pub const MIN_EXAMPLES: usize = 20;

/// Test scores over random splits (Pearson r or macro-F1), with the same
/// probe fitted on shuffled inputs as a control.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub task: ProbeTask,
    pub probe: String,
    pub provenance: String,
    pub examples: usize,
    pub scores: Vec<f64>,
    pub control_scores: Vec<f64>,
    pub mean: f64,
    pub sem: f64,
    pub control_mean: f64,
    pub control_sem: f64,
    /// Regularization picked on each split; empty for the perceptron.
    pub alpha_chosen: Vec<f64>,
}

/// Macro-averaged F1 over every class seen in either sequence.
pub fn macro_f1(truth: &[f64], predicted: &[f64]) -> f64 {
    let classes: BTreeSet<i64> = truth.iter().chain(predicted).map(|c| *c as i64).collect();
    if classes.is_empty() {
        return 0.0;
    }
    let f1s: Vec<f64> = classes
        .iter()
        .map(|&c| {
            let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
            for (t, p) in truth.iter().zip(predicted) {
                match (*t as i64 == c, *p as i64 == c) {
                    (true, true) => tp += 1.0,
                    (false, true) => fp += 1.0,
                    (true, false) => fn_ += 1.0,
                    _ => {}
                }
            }
            if tp == 0.0 {
                0.0
            } else {
                2.0 * tp / (2.0 * tp + fp + fn_)
            }
        })
        .collect();
    mean(&f1s)
}

fn splits(n: usize, seed: u64) -> Vec<(Vec<usize>, Vec<usize>)> {
    let n_test = ((n as f64 * TEST_FRACTION).round() as usize).clamp(2, n - 2);
    (0..N_SPLITS)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let test = idx[..n_test].to_vec();
            let train = idx[n_test..].to_vec();
            (train, test)
        })
        .collect()
}

fn check(dataset: &ProbeDataset) -> Result<(), ProbeError> {
    if dataset.len() < MIN_EXAMPLES {
        return Err(ProbeError::TooFewExamples(dataset.len()));
    }
    let first = dataset.targets[0];
    if dataset.targets.iter().all(|t| *t == first) {
        return Err(ProbeError::DegenerateTargets(match dataset.task {
            ProbeTask::Regression => "constant target".into(),
            ProbeTask::Classification => "a single class".into(),
        }));
    }
    Ok(())
}

fn score(task: ProbeTask, truth: &[f64], predicted: &[f64]) -> f64 {
    match task {
        ProbeTask::Regression => pearson_or_zero(predicted, truth).unwrap_or(0.0),
        ProbeTask::Classification => macro_f1(truth, predicted),
    }
}

/// Per-split scores and chosen regularization for one fitter.
type Fitter<'a> = dyn Fn(&[&[f64]], &[f64], u64) -> Result<(Box<dyn Fn(&[f64]) -> f64>, Option<f64>), ProbeError> + 'a;

fn run_splits(dataset: &ProbeDataset, seed: u64, fit: &Fitter<'_>) -> Result<(Vec<f64>, Vec<f64>), ProbeError> {
    let mut scores = Vec::with_capacity(N_SPLITS);
    let mut alphas = Vec::new();
    for (i, (train, test)) in splits(dataset.len(), seed).into_iter().enumerate() {
        let xs: Vec<&[f64]> = train.iter().map(|&j| dataset.inputs[j].as_slice()).collect();
        let ys: Vec<f64> = train.iter().map(|&j| dataset.targets[j]).collect();
        let split_seed = seed.wrapping_add(i as u64 * 0x9e37_79b9);
        let (predict, alpha) = match fit(&xs, &ys, split_seed) {
            Ok(fitted) => fitted,
            // A training split can miss all but one class or value.
            Err(ProbeError::DegenerateTargets(_)) => {
                let c = ys[0];
                (Box::new(move |_: &[f64]| c) as Box<dyn Fn(&[f64]) -> f64>, None)
            }
            Err(e) => return Err(e),
        };
        let truth: Vec<f64> = test.iter().map(|&j| dataset.targets[j]).collect();
        let pred: Vec<f64> = test.iter().map(|&j| predict(&dataset.inputs[j])).collect();
        scores.push(score(dataset.task, &truth, &pred));
        alphas.extend(alpha);
    }
    Ok((scores, alphas))
}

fn report(
    dataset: &ProbeDataset,
    seed: u64,
    probe: &str,
    fit: &Fitter<'_>,
) -> Result<ProbeReport, ProbeError> {
    check(dataset)?;
    let (scores, alpha_chosen) = run_splits(dataset, seed, fit)?;
    let control = shuffle_embeddings(dataset, seed ^ 0x5348_5546);
    let (control_scores, _) = run_splits(&control, seed, fit)?;
    Ok(ProbeReport {
        task: dataset.task,
        probe: probe.to_string(),
        provenance: dataset.provenance.clone(),
        examples: dataset.len(),
        mean: mean(&scores),
        sem: sem(&scores),
        control_mean: mean(&control_scores),
        control_sem: sem(&control_scores),
        scores,
        control_scores,
        alpha_chosen,
    })
}

/// Ridge probe with leave-one-out α selection on each of
/// [`N_SPLITS`] random 80/20 splits.
pub fn fit_linear_probe(dataset: &ProbeDataset, seed: u64) -> Result<ProbeReport, ProbeError> {
    let task = dataset.task;
    let classes = dataset.n_classes();
    let fit = move |xs: &[&[f64]], ys: &[f64], _seed: u64| {
        let model = RidgeFit::fit(xs, ys, task, classes)?;
        let alpha = model.alpha;
        Ok((Box::new(move |x: &[f64]| model.predict(x)) as Box<dyn Fn(&[f64]) -> f64>, Some(alpha)))
    };
    report(dataset, seed, "ridge", &fit)
}

/// Two-hidden-layer perceptron probe on the same splits.
pub fn fit_shallow_probe(
    dataset: &ProbeDataset,
    config: &MlpProbeConfig,
    seed: u64,
) -> Result<ProbeReport, ProbeError> {
    let task = dataset.task;
    let classes = dataset.n_classes();
    let fit = move |xs: &[&[f64]], ys: &[f64], s: u64| {
        let model = MlpProbe::fit(xs, ys, task, classes, config, s)?;
        Ok((Box::new(move |x: &[f64]| model.predict(x)) as Box<dyn Fn(&[f64]) -> f64>, None))
    };
    report(dataset, seed, "mlp", &fit)
}

/// Two-sided paired t-test with a Bonferroni correction over
/// `comparisons` tests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    pub mean_difference: f64,
    pub t: f64,
    pub p: f64,
    pub p_corrected: f64,
}

impl PairedTest {
    pub fn significant(&self, level: f64) -> bool {
        self.p_corrected < level
    }
}

pub fn paired_test(a: &[f64], b: &[f64], comparisons: usize) -> Result<PairedTest, ProbeError> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(ProbeError::Malformed("paired test needs two equal-length samples of size ≥ 2".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let m = mean(&diffs);
    let se = sem(&diffs);
    let (t, p) = if se == 0.0 {
        if m == 0.0 {
            (0.0, 1.0)
        } else {
            (m.signum() * f64::INFINITY, 0.0)
        }
    } else {
        let t = m / se;
        let dist = StudentsT::new(0.0, 1.0, (diffs.len() - 1) as f64).expect("valid degrees of freedom");
        (t, 2.0 * (1.0 - dist.cdf(t.abs())))
    };
    Ok(PairedTest { mean_difference: m, t, p, p_corrected: (p * comparisons.max(1) as f64).min(1.0) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn linear(n: usize, seed: u64, noise: f64) -> ProbeDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let ys = xs.iter().map(|x| x[0] - 2.0 * x[3] + noise * rng.random_range(-1.0..1.0)).collect();
        ProbeDataset::new(xs, ys, ProbeTask::Regression, "synthetic").unwrap()
    }

    #[test]
    fn realizable_targets_are_recovered() {
        let r = fit_linear_probe(&linear(100, 1, 0.0), 0).unwrap();
        assert_eq!(r.scores.len(), N_SPLITS);
        assert!(r.scores.iter().all(|s| *s >= 0.999));
        assert!(r.alpha_chosen.iter().all(|a| crate::probes::ALPHAS.contains(a)));
        assert!(r.control_mean < 0.5);
    }

    #[test]
    fn noise_targets_stay_near_zero() {
        let mut d = linear(200, 2, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        d.targets.iter_mut().for_each(|t| *t = rng.random_range(-1.0..1.0));
        let r = fit_linear_probe(&d, 1).unwrap();
        assert!(r.mean.abs() < 0.3, "{r:?}");
    }

    #[test]
    fn reports_are_deterministic_and_guarded() {
        let d = linear(40, 3, 0.3);
        assert_eq!(fit_linear_probe(&d, 9).unwrap(), fit_linear_probe(&d, 9).unwrap());
        let small = linear(10, 3, 0.3);
        assert!(matches!(fit_linear_probe(&small, 0), Err(ProbeError::TooFewExamples(10))));
        let mut flat = d.clone();
        flat.targets.iter_mut().for_each(|t| *t = 1.0);
        assert!(matches!(fit_linear_probe(&flat, 0), Err(ProbeError::DegenerateTargets(_))));
    }

    #[test]
    fn shallow_beats_linear_on_xor() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let xs: Vec<Vec<f64>> = (0..300).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let ys = xs.iter().map(|x| x[0] * x[1]).collect();
        let d = ProbeDataset::new(xs, ys, ProbeTask::Regression, "xor").unwrap();
        let config = MlpProbeConfig::default();
        let lin = fit_linear_probe(&d, 0).unwrap();
        let mlp = fit_shallow_probe(&d, &config, 0).unwrap();
        assert!(mlp.mean > lin.mean + 0.3, "mlp {} vs linear {}", mlp.mean, lin.mean);
        assert_eq!(mlp.scores.len(), N_SPLITS);
        assert_eq!(mlp, fit_shallow_probe(&d, &config, 0).unwrap());
    }

    #[test]
    fn f1_and_paired_test() {
        assert_eq!(macro_f1(&[0.0, 1.0, 1.0], &[0.0, 1.0, 1.0]), 1.0);
        // Class 0: tp 1, fn 1 → 2/3; class 1: tp 1, fp 1 → 2/3.
        assert!((macro_f1(&[0.0, 0.0, 1.0], &[0.0, 1.0, 1.0]) - 2.0 / 3.0).abs() < 1e-12);
        let t = paired_test(&[0.5, 0.6, 0.55, 0.62, 0.58], &[0.1, 0.05, 0.12, 0.0, 0.08], 2).unwrap();
        assert!(t.significant(0.05));
        assert!(t.p_corrected >= t.p);
        let same = paired_test(&[0.1, 0.2], &[0.1, 0.2], 1).unwrap();
        assert_eq!(same.p, 1.0);
    }
}
