use super::MetricsError;
use crate::minilang::{analyze, Program};

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, MetricsError> {
    if xs.len() != ys.len() {
        return Err(MetricsError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(MetricsError::TooFewSamples(xs.len()));
    }
    let mx = mean(xs);
    let my = mean(ys);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::UndefinedCorrelation);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// [`pearson`] with constant series mapped to zero correlation.
pub fn pearson_or_zero(xs: &[f64], ys: &[f64]) -> Result<f64, MetricsError> {
    match pearson(xs, ys) {
        Err(MetricsError::UndefinedCorrelation) => Ok(0.0),
        other => other,
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard error of the mean with the n - 1 variance.
pub fn sem(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    (var / xs.len() as f64).sqrt()
}

/// Cosine similarity of two count vectors; two zero vectors count as
/// identical.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    match (na == 0.0, nb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => (dot / (na * nb).sqrt()).clamp(0.0, 1.0),
    }
}

/// Cosine of the bag-of-colors vectors of two programs.
pub fn color_similarity(a: &Program, b: &Program) -> f64 {
    let ca: Vec<f64> = analyze(a).color_counts.iter().map(|&c| c as f64).collect();
    let cb: Vec<f64> = analyze(b).color_counts.iter().map(|&c| c as f64).collect();
    cosine(&ca, &cb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minilang::parse;
    use approx::assert_abs_diff_eq;

    #[test]
    fn pearson_cases() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        assert_abs_diff_eq!(pearson(&xs, &ys).unwrap(), 1.0, epsilon = 1e-12);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert_abs_diff_eq!(pearson(&xs, &neg).unwrap(), -1.0, epsilon = 1e-12);
        // cov = 1.5, var x = 1, var y = 7/3 (population sums 2 and 14/3).
        let expected = 3.0 / (2.0f64 * 14.0 / 3.0).sqrt();
        assert_abs_diff_eq!(pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap(), expected, epsilon = 1e-12);
        assert!(matches!(pearson(&[1.0, 1.0], &[1.0, 2.0]), Err(MetricsError::UndefinedCorrelation)));
        assert_eq!(pearson_or_zero(&[1.0, 1.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(pearson(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn colors() {
        let p = parse("pen red\ndot blue");
        assert_eq!(color_similarity(&p, &p), 1.0);
        assert_eq!(color_similarity(&parse("pen red"), &parse("pen blue")), 0.0);
        assert_eq!(color_similarity(&parse("fd 1"), &parse("rt 2")), 1.0);
        let v = color_similarity(&parse("pen red\npen red\npen blue"), &parse("pen red"));
        assert_abs_diff_eq!(v, 2.0 / 5f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn sem_of_constant_is_zero() {
        assert_eq!(sem(&[2.0, 2.0, 2.0]), 0.0);
        assert_abs_diff_eq!(sem(&[1.0, 3.0]), 1.0, epsilon = 1e-12);
    }
}
