use tracelab_core::metrics::{backtracking_ratio, mean, pearson};
use tracelab_core::minilang::{analyze, parse};
use tracelab_core::simulator::{build_corpus, make_templates, sample_population, simulate_trace};

/// Counts of `xs` in `bins` equal-width bins over `[lo, hi)` must each sit
/// within three binomial standard deviations of the expected count.
fn assert_uniform(xs: &[f64], lo: f64, hi: f64, bins: usize) {
    let n = xs.len() as f64;
    let p = 1.0 / bins as f64;
    let sigma = (n * p * (1.0 - p)).sqrt();
    let mut counts = vec![0usize; bins];
    for x in xs {
        let b = (((x - lo) / (hi - lo)) * bins as f64).floor() as usize;
        counts[b.min(bins - 1)] += 1;
    }
    for c in counts {
        assert!((c as f64 - n * p).abs() <= 3.0 * sigma, "bin count {c} vs {}", n * p);
    }
}

#[test]
fn trait_distributions_match_configuration() {
    let pop = sample_population(2000, 17);
    let b: Vec<f64> = pop.iter().map(|p| p.backtrack_propensity).collect();
    let c: Vec<f64> = pop.iter().map(|p| p.comment_rate).collect();
    let s: Vec<f64> = pop.iter().map(|p| p.skill).collect();
    assert_uniform(&b, 0.0, 0.6, 10);
    assert_uniform(&c, 0.0, 0.6, 10);
    assert_uniform(&s, 0.5, 1.0, 10);

    // Log-normal traits: the log has the configured mean and spread.
    for (values, mu, sd) in [
        (pop.iter().map(|p| p.pace.ln()).collect::<Vec<_>>(), 40f64.ln(), 0.6),
        (pop.iter().map(|p| p.verbosity.ln()).collect::<Vec<_>>(), 5f64.ln(), 0.25),
    ] {
        let m = mean(&values);
        assert!((m - mu).abs() <= 3.0 * sd / (values.len() as f64).sqrt(), "log mean {m} vs {mu}");
        let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
        let se_var = sd * sd * (2.0 / (values.len() - 1) as f64).sqrt();
        assert!((var - sd * sd).abs() <= 3.0 * se_var, "log variance {var}");
    }

    let years: Vec<f64> = pop.iter().map(|p| p.active_year as f64 - 2015.0).collect();
    assert_uniform(&years, 0.0, 10.0, 10);
    assert!(pearson(&b, &s).unwrap() < -0.3);
}

#[test]
fn backtracking_trait_is_identifiable_from_one_trace() {
    let templates = make_templates(60, 1);
    let pop = sample_population(200, 2);
    let corpus = build_corpus(&pop, &templates, (1, 1), 3).unwrap();
    let truth: Vec<f64> = pop.iter().map(|p| p.backtrack_propensity).collect();
    let measured: Vec<f64> = corpus.iter().map(|r| backtracking_ratio(&r.states()).unwrap_or(0.0)).collect();
    let r = pearson(&truth, &measured).unwrap();
    assert!(r > 0.8, "r = {r}");
}

#[test]
fn comment_trait_is_identifiable() {
    let templates = make_templates(60, 1);
    let pop = sample_population(200, 4);
    let corpus = build_corpus(&pop, &templates, (5, 5), 5).unwrap();
    let truth: Vec<f64> = pop.iter().map(|p| p.comment_rate).collect();
    let measured: Vec<f64> = pop
        .iter()
        .map(|p| {
            let counts: Vec<f64> = corpus
                .iter()
                .filter(|r| r.student_id == p.student_id)
                .map(|r| analyze(&parse(r.final_program().unwrap())).comment_count as f64)
                .collect();
            mean(&counts)
        })
        .collect();
    let r = pearson(&truth, &measured).unwrap();
    assert!(r > 0.8, "r = {r}");
}

#[test]
fn timestamps_stay_in_the_active_year() {
    let templates = make_templates(10, 1);
    for p in sample_population(50, 8) {
        let r = simulate_trace(&p, &templates[0], 1);
        for ts in r.timestamps() {
            let year: i32 = tracelab_core::corpus::format_timestamp(ts)[..4].parse().unwrap();
            assert!(year == p.active_year || year == p.active_year + 1);
        }
        assert_eq!(simulate_trace(&p, &templates[0], 1), r);
    }
}

#[test]
fn jsonl_is_byte_identical_under_seed() {
    let templates = make_templates(20, 1);
    let pop = sample_population(10, 2);
    let write = || {
        let mut buf = Vec::new();
        let corpus = build_corpus(&pop, &templates, (2, 5), 9).unwrap();
        tracelab_core::corpus::write_jsonl(&mut buf, &corpus).unwrap();
        buf
    };
    assert_eq!(write(), write());
}
