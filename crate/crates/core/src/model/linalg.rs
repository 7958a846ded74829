//! Strided dense kernels over row-major `f64` buffers.

/// A matrix view: `data[offset + i * rs + j * cs]` for `i < rows`, `j < cols`.
#[derive(Clone, Copy)]
pub(crate) struct View {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl View {
    pub fn dense(rows: usize, cols: usize) -> Self {
        Self { offset: 0, rows, cols, rs: cols, cs: 1 }
    }

    pub fn at(offset: usize, rows: usize, cols: usize, rs: usize) -> Self {
        Self { offset, rows, cols, rs, cs: 1 }
    }

    pub fn t(self) -> Self {
        Self { rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs, ..self }
    }

    fn last(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            return self.offset;
        }
        self.offset + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs
    }
}

/// `c = alpha * a · b + beta * c`.
pub(crate) fn gemm(alpha: f64, a: &[f64], av: View, b: &[f64], bv: View, beta: f64, c: &mut [f64], cv: View) {
    assert_eq!(av.cols, bv.rows, "inner dimensions");
    assert_eq!((av.rows, bv.cols), (cv.rows, cv.cols), "output shape");
    if cv.rows == 0 || cv.cols == 0 {
        return;
    }
    assert!(av.last() < a.len().max(1) && bv.last() < b.len().max(1) && cv.last() < c.len(), "view out of bounds");
    if av.cols == 0 {
        for i in 0..cv.rows {
            for j in 0..cv.cols {
                let idx = cv.offset + i * cv.rs + j * cv.cs;
                c[idx] *= beta;
            }
        }
        return;
    }
    // SAFETY: the asserts above keep every strided access inside its slice,
    // and `c` is borrowed mutably so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            av.rows,
            av.cols,
            bv.cols,
            alpha,
            a.as_ptr().add(av.offset),
            av.rs as isize,
            av.cs as isize,
            b.as_ptr().add(bv.offset),
            bv.rs as isize,
            bv.cs as isize,
            beta,
            c.as_mut_ptr().add(cv.offset),
            cv.rs as isize,
            cv.cs as isize,
        );
    }
}

/// `c (m×n) [+]= a (m×k) · b (k×n)`, all dense.
pub(crate) fn matmul(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize, accumulate: bool) {
    gemm(1.0, a, View::dense(m, k), b, View::dense(k, n), if accumulate { 1.0 } else { 0.0 }, c, View::dense(m, n));
}

/// `c (k×n) [+]= aᵀ · b` for `a (m×k)` and `b (m×n)`.
pub(crate) fn matmul_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize, accumulate: bool) {
    gemm(
        1.0,
        a,
        View::dense(m, k).t(),
        b,
        View::dense(m, n),
        if accumulate { 1.0 } else { 0.0 },
        c,
        View::dense(k, n),
    );
}

/// `c (m×n) [+]= a · bᵀ` for `a (m×k)` and `b (n×k)`.
pub(crate) fn matmul_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize, accumulate: bool) {
    gemm(
        1.0,
        a,
        View::dense(m, k),
        b,
        View::dense(n, k).t(),
        if accumulate { 1.0 } else { 0.0 },
        c,
        View::dense(m, n),
    );
}

pub(crate) fn add_bias(x: &mut [f64], bias: &[f64]) {
    for row in x.chunks_exact_mut(bias.len()) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

pub(crate) fn add_column_sums(dst: &mut [f64], x: &[f64]) {
    for row in x.chunks_exact(dst.len()) {
        for (d, v) in dst.iter_mut().zip(row) {
            *d += v;
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub(crate) const LN_EPS: f64 = 1e-5;

/// Row-wise layer norm; returns per-row mean and reciprocal std.
pub(crate) fn layer_norm(x: &[f64], g: &[f64], b: &[f64], out: &mut [f64], mean: &mut [f64], rstd: &mut [f64]) {
    let d = g.len();
    for (r, (row, o)) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)).enumerate() {
        let m = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        for j in 0..d {
            o[j] = (row[j] - m) * rs * g[j] + b[j];
        }
        mean[r] = m;
        rstd[r] = rs;
    }
}

/// Accumulates `dg`, `db` and adds the input gradient into `dx`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn layer_norm_backward(
    dy: &[f64],
    x: &[f64],
    g: &[f64],
    mean: &[f64],
    rstd: &[f64],
    dx: &mut [f64],
    mut dg: Option<&mut [f64]>,
    mut db: Option<&mut [f64]>,
) {
    let d = g.len();
    let mut dxhat = vec![0.0; d];
    for r in 0..mean.len() {
        let row = &x[r * d..(r + 1) * d];
        let dyr = &dy[r * d..(r + 1) * d];
        let (m, rs) = (mean[r], rstd[r]);
        let mut sum = 0.0;
        let mut sum_xhat = 0.0;
        for j in 0..d {
            let xhat = (row[j] - m) * rs;
            dxhat[j] = dyr[j] * g[j];
            sum += dxhat[j];
            sum_xhat += dxhat[j] * xhat;
            if let Some(dg) = dg.as_deref_mut() {
                dg[j] += dyr[j] * xhat;
            }
            if let Some(db) = db.as_deref_mut() {
                db[j] += dyr[j];
            }
        }
        let (mean_d, mean_dx) = (sum / d as f64, sum_xhat / d as f64);
        let out = &mut dx[r * d..(r + 1) * d];
        for j in 0..d {
            let xhat = (row[j] - m) * rs;
            out[j] += rs * (dxhat[j] - mean_d - xhat * mean_dx);
        }
    }
}

/// In-place softmax of a row; returns log of the normalizer.
pub(crate) fn softmax_in_place(row: &mut [f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
    max + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn products_match_naive() {
        let a: Vec<f64> = (0..6).map(|x| x as f64).collect(); // 2×3
        let b: Vec<f64> = (0..12).map(|x| (x as f64) * 0.5).collect(); // 3×4
        let mut c = vec![0.0; 8];
        matmul(&a, &b, &mut c, 2, 3, 4, false);
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = (0..3).map(|k| a[i * 3 + k] * b[k * 4 + j]).sum();
                assert_abs_diff_eq!(c[i * 4 + j], want);
            }
        }
        let mut ct = vec![0.0; 12];
        let b2: Vec<f64> = (0..8).map(|x| x as f64).collect();
        matmul_tn(&a, &b2, &mut ct, 2, 3, 4, false);
        for i in 0..3 {
            for j in 0..4 {
                let want: f64 = (0..2).map(|k| a[k * 3 + i] * b2[k * 4 + j]).sum();
                assert_abs_diff_eq!(ct[i * 4 + j], want);
            }
        }
        let mut cn = vec![0.0; 4];
        matmul_nt(&a, &a, &mut cn, 2, 3, 2, false);
        assert_abs_diff_eq!(cn[1], 0.0 * 3.0 + 1.0 * 4.0 + 2.0 * 5.0);
    }

    #[test]
    fn gelu_derivative() {
        for x in [-3.0, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert_abs_diff_eq!(gelu_grad(x), fd, epsilon = 1e-8);
        }
    }
}
