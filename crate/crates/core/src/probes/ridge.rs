use nalgebra::{DMatrix, DVector};

use super::{ProbeError, ProbeTask};

/// Regularization strengths searched by leave-one-out validation.
pub const ALPHAS: [f64; 8] = [1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7];

/// A ridge model with an unpenalized intercept. Classification fits one
/// `±1` indicator column per class and predicts the largest score.
#[derive(Clone, Debug, PartialEq)]
pub struct RidgeFit {
    pub alpha: f64,
    pub task: ProbeTask,
    coef: DMatrix<f64>,
    intercept: DVector<f64>,
}

pub(crate) fn to_matrix(rows: &[&[f64]]) -> DMatrix<f64> {
    let d = rows.first().map_or(0, |r| r.len());
    DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j])
}

fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows().max(1) as f64;
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n))
}

fn center(m: &DMatrix<f64>, means: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    out
}

fn target_matrix(targets: &[f64], task: ProbeTask, n_classes: usize) -> Result<DMatrix<f64>, ProbeError> {
    match task {
        ProbeTask::Regression => {
            let first = targets[0];
            if targets.iter().all(|t| *t == first) {
                return Err(ProbeError::DegenerateTargets("constant regression target".into()));
            }
            Ok(DMatrix::from_column_slice(targets.len(), 1, targets))
        }
        ProbeTask::Classification => {
            let first = targets[0];
            if targets.iter().all(|t| *t == first) {
                return Err(ProbeError::DegenerateTargets("a single class".into()));
            }
            Ok(DMatrix::from_fn(targets.len(), n_classes.max(2), |i, k| {
                if targets[i] as usize == k {
                    1.0
                } else {
                    -1.0
                }
            }))
        }
    }
}

impl RidgeFit {
    /// Fits on `inputs` choosing α from [`ALPHAS`] by the closed-form
    /// leave-one-out squared error.
    pub fn fit(inputs: &[&[f64]], targets: &[f64], task: ProbeTask, n_classes: usize) -> Result<Self, ProbeError> {
        let n = inputs.len();
        if n < 2 {
            return Err(ProbeError::TooFewExamples(n));
        }
        let x = to_matrix(inputs);
        let y = target_matrix(targets, task, n_classes)?;
        let x_mean = column_means(&x);
        let y_mean = column_means(&y);
        let xc = center(&x, &x_mean);
        let yc = center(&y, &y_mean);
        let svd = xc.svd(true, true);
        let u = svd.u.expect("left singular vectors");
        let v_t = svd.v_t.expect("right singular vectors");
        let s = &svd.singular_values;
        let uty = u.transpose() * &yc;
        let mut best = (f64::INFINITY, ALPHAS[0]);
        for &alpha in &ALPHAS {
            let f: Vec<f64> = s.iter().map(|s| s * s / (s * s + alpha)).collect();
            let mut scaled = uty.clone();
            for (j, mut row) in scaled.row_iter_mut().enumerate() {
                row *= f[j];
            }
            let fitted = &u * scaled;
            let mut err = 0.0;
            for i in 0..n {
                let h = 1.0 / n as f64 + (0..s.len()).map(|j| u[(i, j)] * u[(i, j)] * f[j]).sum::<f64>();
                let denom = 1.0 - h;
                if denom <= 1e-12 {
                    err = f64::INFINITY;
                    break;
                }
                for k in 0..yc.ncols() {
                    let r = (yc[(i, k)] - fitted[(i, k)]) / denom;
                    err += r * r;
                }
            }
            if err < best.0 {
                best = (err, alpha);
            }
        }
        let alpha = best.1;
        let mut scaled = uty;
        for (j, mut row) in scaled.row_iter_mut().enumerate() {
            row *= s[j] / (s[j] * s[j] + alpha);
        }
        let coef = v_t.transpose() * scaled;
        let intercept = &y_mean - coef.transpose() * &x_mean;
        Ok(Self { alpha, task, coef, intercept })
    }

    fn scores(&self, x: &[f64]) -> DVector<f64> {
        let xv = DVector::from_column_slice(x);
        self.coef.transpose() * xv + &self.intercept
    }

    /// A regression value, or a class index for classification.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let s = self.scores(x);
        match self.task {
            ProbeTask::Regression => s[0],
            ProbeTask::Classification => s.argmax().0 as f64,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn recovers_a_linear_map() {
        let xs = data(60, 4, 1);
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x[0] - 2.0 * x[2] + 0.5).collect();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let fit = RidgeFit::fit(&refs, &ys, ProbeTask::Regression, 0).unwrap();
        assert!(ALPHAS.contains(&fit.alpha));
        assert!((fit.predict(&[1.0, 0.0, 1.0, 0.0]) - 1.5).abs() < 1e-3);
    }

    #[test]
    fn loo_matches_explicit_refits() {
        // The closed form must agree with literally leaving each point out.
        let xs = data(12, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ys: Vec<f64> = xs.iter().map(|x| x[0] + rng.random_range(-0.5..0.5)).collect();
        let loo = |alpha: f64| -> f64 {
            (0..xs.len())
                .map(|i| {
                    let rest: Vec<usize> = (0..xs.len()).filter(|&j| j != i).collect();
                    let x = DMatrix::from_fn(rest.len(), 3, |r, c| xs[rest[r]][c]);
                    let y = DVector::from_iterator(rest.len(), rest.iter().map(|&j| ys[j]));
                    let xm = column_means(&x);
                    let ym = y.mean();
                    let xc = center(&x, &xm);
                    let a = xc.transpose() * &xc + DMatrix::identity(3, 3) * alpha;
                    let w = a.try_inverse().unwrap() * xc.transpose() * y.add_scalar(-ym);
                    let pred = ym + (DVector::from_column_slice(&xs[i]) - &xm).dot(&w);
                    (ys[i] - pred).powi(2)
                })
                .sum()
        };
        let expected = ALPHAS.iter().copied().min_by(|a, b| loo(*a).total_cmp(&loo(*b))).unwrap();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        assert_eq!(RidgeFit::fit(&refs, &ys, ProbeTask::Regression, 0).unwrap().alpha, expected);
    }

    #[test]
    fn classifies_separable_classes() {
        let xs = data(90, 2, 4);
        let ys: Vec<f64> = xs.iter().map(|x| if x[0] > 0.3 { 2.0 } else if x[0] < -0.3 { 0.0 } else { 1.0 }).collect();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let fit = RidgeFit::fit(&refs, &ys, ProbeTask::Classification, 3).unwrap();
        assert_eq!(fit.predict(&[0.9, 0.0]), 2.0);
        assert_eq!(fit.predict(&[-0.9, 0.0]), 0.0);
        assert!(matches!(
            RidgeFit::fit(&refs, &vec![1.0; 90], ProbeTask::Classification, 3),
            Err(ProbeError::DegenerateTargets(_))
        ));
    }
}
