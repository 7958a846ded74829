use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, LogNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::minilang::COLORS;

/// Latent traits of one simulated student.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentProfile {
    pub student_id: String,
    /// Probability that an edit moves away from the goal program.
    pub backtrack_propensity: f64,
    /// Probability of a comment line before each goal instruction.
    pub comment_rate: f64,
    /// Color preference weights over [`COLORS`]; sums to one.
    pub palette: Vec<f64>,
    /// Mean seconds between saves.
    pub pace: f64,
    /// Probability that a forward edit is free of execution errors.
    pub skill: f64,
    /// Mean goal-program length in instructions.
    pub verbosity: f64,
    pub active_year: i32,
}

impl StudentProfile {
    pub fn favorite_color(&self) -> usize {
        self.palette
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

/// Distributions traits are drawn from.
///
/// Propensities are uniform on `[0, max]`. Skill is uniform on
/// `[skill_floor, 1]` and, through a mixture copula, anti-correlated with
/// backtracking: with probability `skill_coupling` its uniform draw is
/// `1 - u` for the backtracking draw `u`. Pace and verbosity are
/// log-normal; the palette is a symmetric Dirichlet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationConfig {
    pub max_backtrack: f64,
    pub max_comment_rate: f64,
    pub skill_floor: f64,
    pub skill_coupling: f64,
    pub pace_log_mean: f64,
    pub pace_log_sd: f64,
    pub verbosity_log_mean: f64,
    pub verbosity_log_sd: f64,
    pub palette_concentration: f64,
    pub first_year: i32,
    pub last_year: i32,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            max_backtrack: 0.6,
            max_comment_rate: 0.6,
            skill_floor: 0.5,
            skill_coupling: 0.5,
            pace_log_mean: 40f64.ln(),
            pace_log_sd: 0.6,
            verbosity_log_mean: 5f64.ln(),
            verbosity_log_sd: 0.25,
            palette_concentration: 0.3,
            first_year: 2015,
            last_year: 2024,
        }
    }
}

/// Stable opaque id for the `index`-th student of a population seed.
pub fn student_hash(seed: u64, index: usize) -> String {
    let digest = Sha256::digest(format!("student:{seed}:{index}").as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

pub fn sample_population(n: usize, seed: u64) -> Vec<StudentProfile> {
    sample_population_with(n, seed, &PopulationConfig::default())
}

pub fn sample_population_with(n: usize, seed: u64, config: &PopulationConfig) -> Vec<StudentProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pace = LogNormal::new(config.pace_log_mean, config.pace_log_sd).expect("valid pace distribution");
    let verbosity =
        LogNormal::new(config.verbosity_log_mean, config.verbosity_log_sd).expect("valid verbosity distribution");
    let gamma = Gamma::new(config.palette_concentration, 1.0).expect("valid palette concentration");
    (0..n)
        .map(|index| {
            let bt_u: f64 = rng.random();
            let skill_u = if rng.random_bool(config.skill_coupling) {
                1.0 - bt_u
            } else {
                rng.random()
            };
            let mut palette: Vec<f64> = (0..COLORS.len()).map(|_| gamma.sample(&mut rng)).collect();
            let total: f64 = palette.iter().sum();
            if total > 0.0 && total.is_finite() {
                palette.iter_mut().for_each(|w| *w /= total);
            } else {
                palette = vec![1.0 / COLORS.len() as f64; COLORS.len()];
            }
            StudentProfile {
                student_id: student_hash(seed, index),
                backtrack_propensity: bt_u * config.max_backtrack,
                comment_rate: rng.random::<f64>() * config.max_comment_rate,
                palette,
                pace: pace.sample(&mut rng),
                skill: config.skill_floor + (1.0 - config.skill_floor) * skill_u,
                verbosity: verbosity.sample(&mut rng),
                active_year: rng.random_range(config.first_year..=config.last_year),
            }
        })
        .collect()
}

/// Ground-truth manifest, one row per student.
pub fn write_population_manifest<W: Write>(mut out: W, population: &[StudentProfile]) -> std::io::Result<()> {
    writeln!(
        out,
        "student_id,backtrack_propensity,comment_rate,pace,skill,verbosity,active_year,favorite_color"
    )?;
    for p in population {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}",
            p.student_id,
            p.backtrack_propensity,
            p.comment_rate,
            p.pace,
            p.skill,
            p.verbosity,
            p.active_year,
            COLORS[p.favorite_color()]
        )?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_deterministic() {
        assert!(sample_population(0, 1).is_empty());
        assert_eq!(sample_population(20, 5), sample_population(20, 5));
        assert_ne!(sample_population(20, 5), sample_population(20, 6));
    }

    #[test]
    fn traits_are_in_range() {
        for p in sample_population(500, 3) {
            assert!((0.0..=0.6).contains(&p.backtrack_propensity));
            assert!((0.0..=0.6).contains(&p.comment_rate));
            assert!((0.5..=1.0).contains(&p.skill));
            assert!(p.pace > 0.0);
            assert!((p.palette.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(p.palette.iter().all(|w| *w >= 0.0));
            assert!((2015..=2024).contains(&p.active_year));
        }
    }

    #[test]
    fn ids_are_unique() {
        let pop = sample_population(300, 1);
        let ids: std::collections::BTreeSet<_> = pop.iter().map(|p| &p.student_id).collect();
        assert_eq!(ids.len(), 300);
    }
}
