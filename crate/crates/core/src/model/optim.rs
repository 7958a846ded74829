use std::ops::Range;

pub(crate) const BETA1: f64 = 0.9;
pub(crate) const BETA2: f64 = 0.999;
pub(crate) const EPS: f64 = 1e-8;

/// Adam state for one parameter vector.
#[derive(Clone, Debug)]
pub(crate) struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    /// One update restricted to `ranges`, or all entries when `None`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, ranges: Option<&[Range<usize>]>) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        let len = params.len();
        let mut update = |r: Range<usize>| {
            for i in r {
                let g = grads[i];
                self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
                self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
                params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + EPS);
            }
        };
        match ranges {
            Some(rs) => rs.iter().cloned().for_each(&mut update),
            None => update(0..len),
        }
    }
}

/// Scales the combined gradient to at most `max_norm`; returns the norm
/// before clipping.
pub(crate) fn clip_global_norm(parts: &mut [&mut [f64]], max_norm: f64) -> f64 {
    let norm = parts.iter().flat_map(|p| p.iter()).map(|g| g * g).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        parts.iter_mut().for_each(|p| p.iter_mut().for_each(|g| *g *= s));
    }
    norm
}

/// Linear warmup then linear decay to zero at `total` steps.
pub(crate) fn scheduled_lr(base: f64, step: usize, total: usize, warmup: usize) -> f64 {
    if warmup > 0 && step < warmup {
        return base * (step + 1) as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup).max(1);
    let done = step.saturating_sub(warmup);
    base * (1.0 - done as f64 / span as f64).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut x = vec![3.0, -2.0];
        let mut opt = Adam::new(2);
        for _ in 0..2000 {
            let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            opt.step(&mut x, &g, 0.01, None);
        }
        assert!(x.iter().all(|v| v.abs() < 1e-3));
    }

    #[test]
    fn masked_entries_stay_put() {
        let mut x = vec![1.0; 4];
        let mut opt = Adam::new(4);
        opt.step(&mut x, &[1.0; 4], 0.1, Some(&[1..2, 3..4]));
        assert_eq!(x[0], 1.0);
        assert_eq!(x[2], 1.0);
        assert!(x[1] < 1.0 && x[3] < 1.0);
    }

    #[test]
    fn schedule_and_clipping() {
        assert_eq!(scheduled_lr(1.0, 0, 10, 0), 1.0);
        assert_eq!(scheduled_lr(1.0, 5, 10, 0), 0.5);
        assert_eq!(scheduled_lr(1.0, 10, 10, 0), 0.0);
        assert_eq!(scheduled_lr(1.0, 0, 10, 2), 0.5);
        let mut a = vec![3.0];
        let mut b = vec![4.0];
        let n = clip_global_norm(&mut [&mut a, &mut b], 1.0);
        assert_eq!(n, 5.0);
        assert!((a[0] - 0.6).abs() < 1e-12 && (b[0] - 0.8).abs() < 1e-12);
    }
}
