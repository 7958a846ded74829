use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::ridge::to_matrix;
use super::ProbeError;
use crate::corpus::{serialize_prefix, SerializeOptions, TraceRecord};
use crate::metrics::{classify_edit, EditType};
use crate::minilang::parse;
use crate::model::LanguageModel;

fn centered(rows: &[Vec<f64>]) -> (DMatrix<f64>, Vec<f64>) {
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    let mut m = to_matrix(&refs);
    let n = m.nrows() as f64;
    let mut means = Vec::with_capacity(m.ncols());
    for mut col in m.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
        means.push(mean);
    }
    (m, means)
}

/// Linear centered kernel alignment between two activation matrices with
/// matching rows.
pub fn cka(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<f64, ProbeError> {
    if x.len() != y.len() {
        return Err(ProbeError::Malformed(format!("{} rows vs {} rows", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(ProbeError::TooFewExamples(x.len()));
    }
    let (xc, _) = centered(x);
    let (yc, _) = centered(y);
    let xx = (xc.transpose() * &xc).norm();
    let yy = (yc.transpose() * &yc).norm();
    if xx == 0.0 || yy == 0.0 {
        return Err(ProbeError::ZeroVariance);
    }
    let xy = (xc.transpose() * &yc).norm_squared();
    Ok((xy / (xx * yy)).clamp(0.0, 1.0))
}

/// Principal components of a set of row vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit directions, strongest first.
    pub components: Vec<Vec<f64>>,
    /// Share of total variance per component, nonincreasing.
    pub explained_variance_ratio: Vec<f64>,
    /// Input rows in component coordinates.
    pub projections: Vec<Vec<f64>>,
}

impl Pca {
    pub fn reconstruct(&self, projection: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (p, c) in projection.iter().zip(&self.components) {
            out.iter_mut().zip(c).for_each(|(o, v)| *o += p * v);
        }
        out
    }
}

/// PCA by singular value decomposition. Components past the rank of the
/// data carry zero variance.
pub fn pca(rows: &[Vec<f64>], components: usize) -> Result<Pca, ProbeError> {
    if rows.len() < components.max(2) {
        return Err(ProbeError::TooFewExamples(rows.len()));
    }
    let d = rows[0].len();
    if components > d {
        return Err(ProbeError::Malformed(format!("{components} components requested from {d} dimensions")));
    }
    let (xc, mean) = centered(rows);
    let svd = xc.clone().svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors");
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    let total: f64 = s.iter().map(|v| v * v).sum();
    let mut comps = Vec::with_capacity(components);
    let mut ratios = Vec::with_capacity(components);
    for k in 0..components {
        match order.get(k) {
            Some(&j) => {
                comps.push(v_t.row(j).iter().copied().collect::<Vec<f64>>());
                ratios.push(if total > 0.0 { s[j] * s[j] / total } else { 0.0 });
            }
            None => {
                comps.push(vec![0.0; d]);
                ratios.push(0.0);
            }
        }
    }
    let projections = xc
        .row_iter()
        .map(|row| comps.iter().map(|c| row.iter().zip(c).map(|(a, b)| a * b).sum()).collect())
        .collect();
    Ok(Pca { mean, components: comps, explained_variance_ratio: ratios, projections })
}

/// PCA of differences between embeddings of consecutive trace prefixes,
/// each labeled with its edit type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditPca {
    pub pca: Pca,
    pub labels: Vec<EditType>,
}

pub fn pca_edit_deltas(
    model: &LanguageModel,
    records: &[TraceRecord],
    components: usize,
    opts: &SerializeOptions,
) -> Result<EditPca, ProbeError> {
    let mut deltas = Vec::new();
    let mut labels = Vec::new();
    for r in records {
        let mut prev: Option<Vec<f64>> = None;
        for t in 1..=r.events.len() {
            let emb = model.embed_code(&serialize_prefix(r, t, false, opts), Some(&r.student_id));
            if let (Some(a), Some(b)) = (&prev, &emb) {
                let before = parse(&r.events[t - 2].code);
                let after = parse(&r.events[t - 1].code);
                if let Ok(kind) = classify_edit(&before, &after) {
                    deltas.push(b.iter().zip(a).map(|(x, y)| x - y).collect());
                    labels.push(kind);
                }
            }
            prev = emb;
        }
    }
    Ok(EditPca { pca: pca(&deltas, components)?, labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn cka_identities() {
        let x = random(50, 6, 1);
        let y = random(50, 4, 2);
        assert!((cka(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let scaled: Vec<Vec<f64>> = x.iter().map(|r| r.iter().map(|v| -3.5 * v).collect()).collect();
        assert!((cka(&x, &scaled).unwrap() - 1.0).abs() < 1e-12);
        assert!((cka(&x, &y).unwrap() - cka(&y, &x).unwrap()).abs() < 1e-10);
        let flat = vec![vec![1.0, 2.0]; 50];
        assert!(matches!(cka(&x, &flat), Err(ProbeError::ZeroVariance)));
    }

    #[test]
    fn cka_of_independent_data_is_small() {
        let x = random(2000, 5, 3);
        let y = random(2000, 5, 4);
        assert!(cka(&x, &y).unwrap() < 0.1);
    }

    #[test]
    fn pca_ratios_and_reconstruction() {
        let x = random(12, 8, 5);
        let p = pca(&x, 8).unwrap();
        assert_eq!(p.explained_variance_ratio.len(), 8);
        assert!(p.explained_variance_ratio.windows(2).all(|w| w[0] >= w[1]));
        assert!(p.explained_variance_ratio.iter().sum::<f64>() <= 1.0 + 1e-12);
        for (row, proj) in x.iter().zip(&p.projections) {
            for (a, b) in row.iter().zip(p.reconstruct(proj)) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn pca_handles_rank_deficiency() {
        let row = vec![1.0, 2.0, 3.0, 4.0];
        let mut x = vec![row.clone(); 6];
        x.push(vec![2.0, 4.0, 6.0, 8.0]);
        let p = pca(&x, 4).unwrap();
        assert!((p.explained_variance_ratio[0] - 1.0).abs() < 1e-9);
        assert!(p.explained_variance_ratio[1..].iter().all(|r| r.abs() < 1e-12));
        assert!(pca(&x[..2], 4).is_err());
    }
}
