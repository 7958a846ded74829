use nalgebra::{DMatrix, RowDVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ridge::to_matrix;
use super::{ProbeError, ProbeTask};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpProbeConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Epoch cap.
    pub max_iter: usize,
    /// Share of the training data held out for early stopping.
    pub validation_fraction: f64,
    /// Epochs without an improvement above `tol` before stopping.
    pub n_iter_no_change: usize,
    pub tol: f64,
    /// L2 penalty on weights.
    pub l2: f64,
}

impl Default for MlpProbeConfig {
    fn default() -> Self {
        Self {
            hidden: vec![100, 100],
            learning_rate: 1e-3,
            batch_size: 64,
            max_iter: 5000,
            validation_fraction: 0.1,
            n_iter_no_change: 10,
            tol: 1e-4,
            l2: 1e-4,
        }
    }
}

/// A ReLU perceptron on standardized inputs. Regression targets are
/// standardized too; classification uses a softmax output.
#[derive(Clone, Debug)]
pub struct MlpProbe {
    pub task: ProbeTask,
    pub epochs: usize,
    weights: Vec<DMatrix<f64>>,
    biases: Vec<RowDVector<f64>>,
    x_mean: Vec<f64>,
    x_scale: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let (b1, b2) = (0.9, 0.999);
        let c1 = 1.0 - f64::powi(b1, self.t);
        let c2 = 1.0 - f64::powi(b2, self.t);
        for i in 0..params.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grads[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grads[i] * grads[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8);
        }
    }
}

fn relu_in_place(m: &mut DMatrix<f64>) {
    m.apply(|v| *v = v.max(0.0));
}

fn softmax_rows(m: &mut DMatrix<f64>) {
    for mut row in m.row_iter_mut() {
        let max = row.max();
        row.apply(|v| *v = (*v - max).exp());
        let s = row.sum();
        row /= s;
    }
}

impl MlpProbe {
    fn forward(&self, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let mut acts = vec![x.clone()];
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = acts.last().expect("input") * w;
            for mut row in z.row_iter_mut() {
                row += b;
            }
            if l + 1 < self.weights.len() {
                relu_in_place(&mut z);
            } else if self.task == ProbeTask::Classification {
                softmax_rows(&mut z);
            }
            acts.push(z);
        }
        acts
    }

    fn standardize(&self, rows: &[&[f64]]) -> DMatrix<f64> {
        let mut x = to_matrix(rows);
        for (j, mut col) in x.column_iter_mut().enumerate() {
            col.apply(|v| *v = (*v - self.x_mean[j]) / self.x_scale[j]);
        }
        x
    }

    /// Held-out score used for early stopping: R² or accuracy.
    fn score(&self, x: &DMatrix<f64>, y: &[f64]) -> f64 {
        let out = self.forward(x).pop().expect("output");
        match self.task {
            ProbeTask::Regression => {
                let mean = y.iter().sum::<f64>() / y.len() as f64;
                let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
                let ss_res: f64 = y.iter().enumerate().map(|(i, v)| (v - out[(i, 0)]).powi(2)).sum();
                if ss_tot == 0.0 {
                    -ss_res
                } else {
                    1.0 - ss_res / ss_tot
                }
            }
            ProbeTask::Classification => {
                let hits = out.row_iter().zip(y).filter(|(row, t)| row.transpose().argmax().0 as f64 == **t).count();
                hits as f64 / y.len() as f64
            }
        }
    }

    pub fn fit(
        inputs: &[&[f64]],
        targets: &[f64],
        task: ProbeTask,
        n_classes: usize,
        config: &MlpProbeConfig,
        seed: u64,
    ) -> Result<Self, ProbeError> {
        let n = inputs.len();
        if n < 4 {
            return Err(ProbeError::TooFewExamples(n));
        }
        if targets.iter().all(|t| *t == targets[0]) {
            return Err(ProbeError::DegenerateTargets("constant target".into()));
        }
        let d = inputs[0].len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x_mean = vec![0.0; d];
        let mut x_scale = vec![0.0; d];
        for j in 0..d {
            let m = inputs.iter().map(|x| x[j]).sum::<f64>() / n as f64;
            let var = inputs.iter().map(|x| (x[j] - m).powi(2)).sum::<f64>() / n as f64;
            x_mean[j] = m;
            x_scale[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        let (y_mean, y_scale) = match task {
            ProbeTask::Regression => {
                let m = targets.iter().sum::<f64>() / n as f64;
                let sd = (targets.iter().map(|t| (t - m).powi(2)).sum::<f64>() / n as f64).sqrt();
                (m, sd)
            }
            ProbeTask::Classification => (0.0, 1.0),
        };
        let outputs = match task {
            ProbeTask::Regression => 1,
            ProbeTask::Classification => n_classes.max(2),
        };
        let mut sizes = vec![d];
        sizes.extend(&config.hidden);
        sizes.push(outputs);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in sizes.windows(2) {
            let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
            weights.push(DMatrix::from_fn(w[0], w[1], |_, _| rng.random_range(-bound..bound)));
            biases.push(RowDVector::from_fn(w[1], |_, _| rng.random_range(-bound..bound)));
        }
        let mut probe = Self { task, epochs: 0, weights, biases, x_mean, x_scale, y_mean, y_scale };

        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let n_val = ((n as f64 * config.validation_fraction).round() as usize).clamp(1, n - 2);
        let (val_idx, train_idx) = order.split_at(n_val);
        let x_all = probe.standardize(inputs);
        let y_all: Vec<f64> = targets.iter().map(|t| (t - y_mean) / y_scale).collect();
        let x_val = x_all.select_rows(val_idx);
        let y_val: Vec<f64> = val_idx.iter().map(|&i| y_all[i]).collect();
        let mut train_idx = train_idx.to_vec();

        let mut adams: Vec<(Adam, Adam)> = probe
            .weights
            .iter()
            .zip(&probe.biases)
            .map(|(w, b)| {
                (Adam { m: vec![0.0; w.len()], v: vec![0.0; w.len()], t: 0 }, Adam { m: vec![0.0; b.len()], v: vec![0.0; b.len()], t: 0 })
            })
            .collect();
        let mut best = (f64::NEG_INFINITY, probe.weights.clone(), probe.biases.clone());
        let mut stale = 0;
        for epoch in 0..config.max_iter {
            train_idx.shuffle(&mut rng);
            for batch in train_idx.chunks(config.batch_size.max(1)) {
                let xb = x_all.select_rows(batch);
                let acts = probe.forward(&xb);
                let bsz = batch.len() as f64;
                let mut delta = acts.last().expect("output").clone();
                for (r, &i) in batch.iter().enumerate() {
                    match task {
                        ProbeTask::Regression => delta[(r, 0)] -= y_all[i],
                        ProbeTask::Classification => delta[(r, y_all[i] as usize)] -= 1.0,
                    }
                }
                delta /= bsz;
                for l in (0..probe.weights.len()).rev() {
                    let mut gw = acts[l].transpose() * &delta;
                    gw += &probe.weights[l] * (config.l2 / bsz);
                    let gb = delta.row_sum();
                    let next = if l > 0 {
                        let mut back = &delta * probe.weights[l].transpose();
                        back.zip_apply(&acts[l], |g, a| {
                            if a <= 0.0 {
                                *g = 0.0;
                            }
                        });
                        Some(back)
                    } else {
                        None
                    };
                    let (aw, ab) = &mut adams[l];
                    aw.step(probe.weights[l].as_mut_slice(), gw.as_slice(), config.learning_rate);
                    ab.step(probe.biases[l].as_mut_slice(), gb.as_slice(), config.learning_rate);
                    if let Some(next) = next {
                        delta = next;
                    }
                }
            }
            probe.epochs = epoch + 1;
            let score = probe.score(&x_val, &y_val);
            if score > best.0 + config.tol {
                stale = 0;
            } else {
                stale += 1;
            }
            if score > best.0 {
                best = (score, probe.weights.clone(), probe.biases.clone());
            }
            if stale >= config.n_iter_no_change {
                break;
            }
        }
        probe.weights = best.1;
        probe.biases = best.2;
        Ok(probe)
    }

    /// A regression value, or a class index for classification.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let xm = self.standardize(&[x]);
        let out = self.forward(&xm).pop().expect("output");
        match self.task {
            ProbeTask::Regression => out[(0, 0)] * self.y_scale + self.y_mean,
            ProbeTask::Classification => out.row(0).transpose().argmax().0 as f64,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learns_xor() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<Vec<f64>> = (0..400).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x[0] * x[1]).collect();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let p = MlpProbe::fit(&refs, &ys, ProbeTask::Regression, 0, &MlpProbeConfig::default(), 3).unwrap();
        assert!((p.predict(&[0.8, 0.8]) - 0.64).abs() < 0.2);
        assert!((p.predict(&[0.8, -0.8]) + 0.64).abs() < 0.2);
        let c: Vec<f64> = ys.iter().map(|y| if *y > 0.0 { 1.0 } else { 0.0 }).collect();
        let p = MlpProbe::fit(&refs, &c, ProbeTask::Classification, 2, &MlpProbeConfig::default(), 3).unwrap();
        assert_eq!(p.predict(&[-0.7, -0.6]), 1.0);
        assert_eq!(p.predict(&[-0.7, 0.6]), 0.0);
    }
}
