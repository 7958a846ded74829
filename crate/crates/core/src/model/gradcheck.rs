use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lm::{Grads, LanguageModel};
use super::ModelError;

/// Finite-difference step of the five-point stencil.
pub const CHECK_STEP: f64 = 1e-3;
/// Lower bound on the relative-error denominator, so coordinates with
/// vanishing gradients are judged on absolute error.
pub const CHECK_FLOOR: f64 = 1e-4;

/// Analytic gradients compared with central differences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub checked: usize,
    pub max_relative_error: f64,
    /// Name of the parameter group holding the worst coordinate.
    pub worst: String,
}

enum Group {
    Weights,
    Mlp,
    Table,
}

impl LanguageModel {
    fn perturbed(&self, group: &Group, index: usize, delta: f64) -> LanguageModel {
        let mut m = self.clone();
        match group {
            Group::Weights => m.weights[index] += delta,
            Group::Mlp => m.embedder.mlp[index] += delta,
            Group::Table => m.embedder.table[index] += delta,
        }
        m
    }

    /// Checks the gradient of the summed loss on `text` at the first and
    /// last coordinate of every weight tensor, `samples` random weight
    /// coordinates, every perceptron weight and the student's table row.
    pub fn gradient_check(
        &self,
        text: &str,
        student_id: Option<&str>,
        samples: usize,
        seed: u64,
    ) -> Result<GradientCheck, ModelError> {
        let tokens = self.tokenizer.encode(text);
        if tokens.is_empty() {
            return Err(ModelError::InvalidArgument("nothing to check on an empty text".into()));
        }
        if tokens.len() > self.config.context {
            return Err(ModelError::PrefixTooLong { tokens: tokens.len(), context: self.config.context });
        }
        let row = self.embedder.row_of(student_id);
        let mut grads = Grads::zeros(self);
        self.loss_and_grad(row, &tokens, 1.0, Some((&mut grads, true)));

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut coords: Vec<(Group, usize)> = Vec::new();
        for (_, offset, shape) in self.layout.tensors() {
            let n: usize = shape.iter().product();
            coords.push((Group::Weights, offset));
            coords.push((Group::Weights, offset + n - 1));
        }
        for _ in 0..samples {
            coords.push((Group::Weights, rng.random_range(0..self.weights.len())));
        }
        coords.extend((0..self.embedder.mlp.len()).map(|i| (Group::Mlp, i)));
        let d = self.config.width;
        coords.extend((row * d..(row + 1) * d).map(|i| (Group::Table, i)));

        let mut out = GradientCheck { checked: 0, max_relative_error: 0.0, worst: String::new() };
        for (group, i) in &coords {
            let analytic = match group {
                Group::Weights => grads.weights[*i],
                Group::Mlp => grads.mlp[*i],
                Group::Table => grads.table[*i],
            };
            let at = |k: f64| self.perturbed(group, *i, k * CHECK_STEP).loss_and_grad(row, &tokens, 1.0, None);
            let numeric = (8.0 * (at(1.0) - at(-1.0)) - (at(2.0) - at(-2.0))) / (12.0 * CHECK_STEP);
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(CHECK_FLOOR);
            out.checked += 1;
            if rel > out.max_relative_error {
                out.max_relative_error = rel;
                out.worst = match group {
                    Group::Weights => format!("weights[{i}]"),
                    Group::Mlp => format!("mlp[{i}]"),
                    Group::Table => format!("table[{i}]"),
                };
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Tokenizer};

    #[test]
    fn fresh_model_passes() {
        let mut m = LanguageModel::new(ModelConfig::tiny(), Tokenizer::bytes_only(), 4).unwrap();
        let init: Vec<f64> = m.embedder.row(0).iter().map(|v| v + 0.1).collect();
        m.embedder.add_student("s", &init);
        let check = m.gradient_check("pen red\nfd 10\n", Some("s"), 30, 1).unwrap();
        assert!(check.checked > 100);
        assert!(check.max_relative_error <= 1e-4, "{check:?}");
        assert!(m.gradient_check("", None, 1, 1).is_err());
    }
}

