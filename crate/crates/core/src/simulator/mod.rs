//! Simulated students with known latent traits and the traces they write.

mod profile;
mod templates;
mod trace;

pub use profile::{
    sample_population, sample_population_with, student_hash, write_population_manifest, PopulationConfig,
    StudentProfile,
};
pub use templates::{make_templates, Goal, StepSpec, TitleTemplate};
pub use trace::{build_corpus, edit_states, simulate_trace, simulate_trace_with};

/// Systematic sampling of repeated events: a random offset plus a running
/// sum fires on each whole-number crossing. Every trial fires with
/// probability `p`, while the count over `n` trials stays within one of
/// `n * p`.
#[derive(Clone, Debug)]
pub struct Systematic {
    acc: f64,
}

impl Systematic {
    pub fn new<R: rand::Rng>(rng: &mut R) -> Self {
        Self { acc: rng.random() }
    }

    pub fn fire(&mut self, p: f64) -> bool {
        self.acc += p.clamp(0.0, 1.0);
        if self.acc >= 1.0 {
            self.acc -= 1.0;
            true
        } else {
            false
        }
    }
}
