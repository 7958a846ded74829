use std::collections::BTreeMap;
use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::linalg::{gelu, gelu_grad};

/// Table row reserved for students without their own row.
pub const UNKNOWN_ROW: usize = 0;

/// Per-student lookup table feeding a two-layer perceptron that yields the
/// soft token.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentEmbedder {
    /// Row-embedding and output width.
    pub width: usize,
    pub hidden: usize,
    students: BTreeMap<String, usize>,
    /// `rows × width`, row 0 is UNKNOWN.
    pub(crate) table: Vec<f64>,
    /// `w1 (width×hidden) | b1 | w2 (hidden×width) | b2`.
    pub(crate) mlp: Vec<f64>,
}

/// Intermediate values for one soft token.
pub(crate) struct SoftToken {
    pub row: usize,
    pub pre: Vec<f64>,
    pub act: Vec<f64>,
    pub out: Vec<f64>,
}

impl StudentEmbedder {
    pub fn new<R: Rng>(width: usize, hidden: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let mut mlp = vec![0.0; 2 * width * hidden + hidden + width];
        let (w1, w2) = (0..width * hidden, width * hidden + hidden..2 * width * hidden + hidden);
        for i in w1.chain(w2) {
            mlp[i] = normal.sample(rng);
        }
        let table = (0..width).map(|_| normal.sample(rng)).collect();
        Self { width, hidden, students: BTreeMap::new(), table, mlp }
    }

    pub(crate) fn from_parts(
        width: usize,
        hidden: usize,
        students: &[String],
        table: Vec<f64>,
        mlp: Vec<f64>,
    ) -> Option<Self> {
        let ok = table.len() == (students.len() + 1) * width && mlp.len() == 2 * width * hidden + hidden + width;
        let students = students.iter().enumerate().map(|(i, s)| (s.clone(), i + 1)).collect();
        ok.then_some(Self { width, hidden, students, table, mlp })
    }

    /// Student ids in table-row order, UNKNOWN excluded.
    pub fn students_by_row(&self) -> Vec<String> {
        let mut out: Vec<(usize, &String)> = self.students.iter().map(|(s, r)| (*r, s)).collect();
        out.sort();
        out.into_iter().map(|(_, s)| s.clone()).collect()
    }

    pub fn rows(&self) -> usize {
        self.table.len() / self.width
    }

    pub fn students(&self) -> impl Iterator<Item = &str> {
        self.students.keys().map(String::as_str)
    }

    pub fn contains(&self, student_id: &str) -> bool {
        self.students.contains_key(student_id)
    }

    /// Table row for a student, UNKNOWN when absent.
    pub fn row_of(&self, student_id: Option<&str>) -> usize {
        student_id.and_then(|s| self.students.get(s).copied()).unwrap_or(UNKNOWN_ROW)
    }

    /// Adds a row initialized from `init` and returns its index; existing
    /// students keep their row.
    pub fn add_student(&mut self, student_id: &str, init: &[f64]) -> usize {
        if let Some(&row) = self.students.get(student_id) {
            return row;
        }
        let row = self.rows();
        self.table.extend_from_slice(init);
        self.students.insert(student_id.to_string(), row);
        row
    }

    pub(crate) fn row(&self, row: usize) -> &[f64] {
        &self.table[row * self.width..(row + 1) * self.width]
    }

    pub(crate) fn w1_range(&self) -> Range<usize> {
        0..self.width * self.hidden
    }

    pub(crate) fn b1_range(&self) -> Range<usize> {
        let s = self.width * self.hidden;
        s..s + self.hidden
    }

    pub(crate) fn w2_range(&self) -> Range<usize> {
        let s = self.width * self.hidden + self.hidden;
        s..s + self.hidden * self.width
    }

    pub(crate) fn b2_range(&self) -> Range<usize> {
        let s = 2 * self.width * self.hidden + self.hidden;
        s..s + self.width
    }

    pub(crate) fn forward(&self, row: usize) -> SoftToken {
        let (d, h) = (self.width, self.hidden);
        let e = self.row(row);
        let w1 = &self.mlp[self.w1_range()];
        let mut pre = self.mlp[self.b1_range()].to_vec();
        for (i, ei) in e.iter().enumerate() {
            for (p, w) in pre.iter_mut().zip(&w1[i * h..(i + 1) * h]) {
                *p += ei * w;
            }
        }
        let act: Vec<f64> = pre.iter().map(|&z| gelu(z)).collect();
        let w2 = &self.mlp[self.w2_range()];
        let mut out = self.mlp[self.b2_range()].to_vec();
        for (j, aj) in act.iter().enumerate() {
            for (o, w) in out.iter_mut().zip(&w2[j * d..(j + 1) * d]) {
                *o += aj * w;
            }
        }
        SoftToken { row, pre, act, out }
    }

    /// First-layer output for a student.
    pub fn hidden_activation(&self, student_id: Option<&str>) -> Vec<f64> {
        self.forward(self.row_of(student_id)).act
    }

    /// Accumulates gradients of the perceptron (`dmlp`) and of the used
    /// table row (`dtable`, full table shape) given `dout`.
    pub(crate) fn backward(&self, soft: &SoftToken, dout: &[f64], dmlp: &mut [f64], dtable: Option<&mut [f64]>) {
        let (d, h) = (self.width, self.hidden);
        let w2 = &self.mlp[self.w2_range()];
        let mut dpre = vec![0.0; h];
        for j in 0..h {
            let wrow = &w2[j * d..(j + 1) * d];
            let g: f64 = wrow.iter().zip(dout).map(|(w, g)| w * g).sum();
            dpre[j] = g * gelu_grad(soft.pre[j]);
        }
        let w2r = self.w2_range();
        for j in 0..h {
            for (k, g) in dout.iter().enumerate() {
                dmlp[w2r.start + j * d + k] += soft.act[j] * g;
            }
        }
        let b2r = self.b2_range();
        dmlp[b2r].iter_mut().zip(dout).for_each(|(a, g)| *a += g);
        let e = self.row(soft.row);
        for (i, ei) in e.iter().enumerate() {
            for (j, g) in dpre.iter().enumerate() {
                dmlp[i * h + j] += ei * g;
            }
        }
        let b1r = self.b1_range();
        dmlp[b1r].iter_mut().zip(&dpre).for_each(|(a, g)| *a += g);
        if let Some(dtable) = dtable {
            let w1 = &self.mlp[self.w1_range()];
            let dst = &mut dtable[soft.row * d..(soft.row + 1) * d];
            for (i, v) in dst.iter_mut().enumerate() {
                *v += w1[i * h..(i + 1) * h].iter().zip(&dpre).map(|(w, g)| w * g).sum::<f64>();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unknown_row_always_present() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut e = StudentEmbedder::new(8, 4, &mut rng);
        assert_eq!(e.rows(), 1);
        assert_eq!(e.row_of(Some("nobody")), UNKNOWN_ROW);
        let init = e.row(UNKNOWN_ROW).to_vec();
        let r = e.add_student("abc", &init);
        assert_eq!(r, 1);
        assert_eq!(e.add_student("abc", &init), 1);
        assert_eq!(e.forward(r).out.len(), 8);
        assert_eq!(e.hidden_activation(Some("zzz")), e.hidden_activation(None));
        assert_eq!(e.hidden_activation(None).len(), 4);
    }

    #[test]
    fn gradients_match_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut e = StudentEmbedder::new(5, 3, &mut rng);
        e.mlp.iter_mut().enumerate().for_each(|(i, v)| *v += 0.3 * ((i as f64) * 0.7).sin());
        e.table.iter_mut().for_each(|v| *v *= 20.0);
        let dout: Vec<f64> = (0..5).map(|i| (i as f64 - 2.0) * 0.5).collect();
        let loss = |e: &StudentEmbedder| e.forward(0).out.iter().zip(&dout).map(|(a, b)| a * b).sum::<f64>();
        let mut dmlp = vec![0.0; e.mlp.len()];
        let mut dtable = vec![0.0; e.table.len()];
        e.backward(&e.forward(0), &dout, &mut dmlp, Some(&mut dtable));
        let h = 1e-6;
        for i in 0..e.mlp.len() {
            let mut p = e.clone();
            p.mlp[i] += h;
            let mut m = e.clone();
            m.mlp[i] -= h;
            let fd = (loss(&p) - loss(&m)) / (2.0 * h);
            assert!((fd - dmlp[i]).abs() < 1e-7, "mlp {i}: {fd} vs {}", dmlp[i]);
        }
        for i in 0..e.table.len() {
            let mut p = e.clone();
            p.table[i] += h;
            let mut m = e.clone();
            m.table[i] -= h;
            let fd = (loss(&p) - loss(&m)) / (2.0 * h);
            assert!((fd - dtable[i]).abs() < 1e-7);
        }
    }
}
