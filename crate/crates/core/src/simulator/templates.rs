use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::profile::StudentProfile;
use super::Systematic;
use crate::minilang::COLORS;

const BASE_TITLES: [&str; 64] = [
    "snowman", "house", "flower", "rose", "star", "tree", "car", "boat", "robot", "spiral", "square", "triangle",
    "circle", "sun", "moon", "cat", "dog", "fish", "bird", "rainbow", "castle", "rocket", "heart", "smile",
    "garden", "city", "bridge", "snake", "dragon", "cloud", "mountain", "train", "kite", "balloon", "clock",
    "owl", "bee", "butterfly", "pumpkin", "ghost", "apple", "cupcake", "pizza", "planet", "galaxy", "ladder",
    "fence", "window", "lamp", "crown", "shield", "sword", "tent", "island", "volcano", "wave", "leaf",
    "mushroom", "penguin", "frog", "turtle", "spider", "diamond", "maze",
];

const FUNCTION_NAMES: [&str; 10] = ["petal", "arm", "leg", "side", "wing", "ring", "block", "spike", "loop", "part"];
const DISTANCES: [u32; 10] = [10, 20, 25, 30, 40, 50, 60, 75, 80, 100];
const ANGLES: [u32; 8] = [30, 45, 60, 72, 90, 120, 144, 180];
const SIZES: [u32; 5] = [10, 20, 30, 40, 50];
const SPEEDS: [u32; 4] = [1, 2, 5, 10];
const COMMENT_WORDS: [&str; 8] = ["start", "move", "turn", "color", "body", "top", "done", "next"];

/// One instruction of a title's reference solution. Color slots index the
/// template's canonical colors and are re-drawn per student.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum StepSpec {
    Pen { slot: usize },
    Move { back: bool, distance: u32 },
    Turn { left: bool, degrees: u32 },
    Dot { slot: usize, size: u32 },
    Speed { value: u32 },
    Await,
    /// `name = (c) ->` with a body that draws in color `c`.
    Define { name: String, distance: u32, degrees: u32, size: u32 },
    Call { name: String, slot: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TitleTemplate {
    pub title: String,
    /// Relative popularity when students pick titles.
    pub weight: f64,
    pub colors: Vec<usize>,
    pub steps: Vec<StepSpec>,
}

/// A goal program as a list of units; each unit is one instruction, a
/// comment, or a function definition with its body.
#[derive(Clone, Debug, PartialEq)]
pub struct Goal {
    pub units: Vec<Vec<String>>,
}

impl Goal {
    pub fn lines(&self, units: usize) -> Vec<String> {
        self.units[..units].concat()
    }

    pub fn render(&self) -> String {
        self.lines(self.units.len()).join("\n")
    }
}

fn title_name(index: usize) -> String {
    let base = BASE_TITLES[index % BASE_TITLES.len()];
    match index / BASE_TITLES.len() {
        0 => base.to_string(),
        round => format!("{base}{}", round + 1),
    }
}

fn plain_step(rng: &mut ChaCha8Rng, n_colors: usize) -> StepSpec {
    match rng.random_range(0..10) {
        0..=2 => StepSpec::Move { back: rng.random_bool(0.15), distance: *DISTANCES.choose(rng).unwrap() },
        3..=5 => StepSpec::Turn { left: rng.random_bool(0.4), degrees: *ANGLES.choose(rng).unwrap() },
        6 | 7 => StepSpec::Dot { slot: rng.random_range(0..n_colors), size: *SIZES.choose(rng).unwrap() },
        _ => StepSpec::Pen { slot: rng.random_range(0..n_colors) },
    }
}

/// `n` deterministic title templates with Zipf-like popularity.
pub fn make_templates(n: usize, seed: u64) -> Vec<TitleTemplate> {
    (0..n)
        .map(|index| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(index as u64 + 1);
            let n_colors = rng.random_range(1..=3);
            let mut colors = Vec::with_capacity(n_colors);
            while colors.len() < n_colors {
                let c = rng.random_range(0..COLORS.len());
                if !colors.contains(&c) {
                    colors.push(c);
                }
            }
            let len = rng.random_range(10..=16);
            let mut steps = Vec::with_capacity(len);
            steps.push(if rng.random_bool(0.3) {
                StepSpec::Speed { value: *SPEEDS.choose(&mut rng).unwrap() }
            } else {
                StepSpec::Pen { slot: 0 }
            });
            let function = rng.random_bool(0.35).then(|| FUNCTION_NAMES.choose(&mut rng).unwrap().to_string());
            if let Some(name) = &function {
                steps.push(StepSpec::Define {
                    name: name.clone(),
                    distance: *DISTANCES.choose(&mut rng).unwrap(),
                    degrees: *ANGLES.choose(&mut rng).unwrap(),
                    size: *SIZES.choose(&mut rng).unwrap(),
                });
                steps.push(StepSpec::Call { name: name.clone(), slot: rng.random_range(0..n_colors) });
            }
            while steps.len() < len {
                let step = match &function {
                    Some(name) if rng.random_bool(0.2) => {
                        StepSpec::Call { name: name.clone(), slot: rng.random_range(0..n_colors) }
                    }
                    _ if rng.random_bool(0.04) => StepSpec::Await,
                    _ => plain_step(&mut rng, n_colors),
                };
                steps.push(step);
            }
            TitleTemplate {
                title: title_name(index),
                weight: 1.0 / (index as f64 + 1.0).powf(0.7),
                colors,
                steps,
            }
        })
        .collect()
}

impl TitleTemplate {
    /// Draws a student's goal program: a verbosity-driven prefix of the
    /// steps, colors from the canonical set or the student's palette, and
    /// comment lines at the student's comment rate (sampled systematically).
    pub fn sample_goal<R: Rng>(&self, profile: &StudentProfile, rng: &mut R) -> Goal {
        let palette = WeightedIndex::new(&profile.palette).ok();
        let slot_colors: Vec<&str> = self
            .colors
            .iter()
            .map(|&canonical| {
                let own = palette.as_ref().map(|p| p.sample(rng));
                match own {
                    Some(c) if rng.random_bool(0.6) => COLORS[c],
                    _ => COLORS[canonical],
                }
            })
            .collect();
        let target = (profile.verbosity * rng.random_range(0.8..1.2)).round() as usize;
        let n = target.clamp(2, self.steps.len());
        let mut units = Vec::with_capacity(n * 2);
        let mut comments = Systematic::new(rng);
        for step in &self.steps[..n] {
            if comments.fire(profile.comment_rate) {
                units.push(vec![format!("# {}", COMMENT_WORDS.choose(rng).unwrap())]);
            }
            units.push(render_step(step, &slot_colors));
        }
        Goal { units }
    }
}

fn render_step(step: &StepSpec, colors: &[&str]) -> Vec<String> {
    match step {
        StepSpec::Pen { slot } => vec![format!("pen {}", colors[*slot])],
        StepSpec::Move { back, distance } => vec![format!("{} {distance}", if *back { "bk" } else { "fd" })],
        StepSpec::Turn { left, degrees } => vec![format!("{} {degrees}", if *left { "lt" } else { "rt" })],
        StepSpec::Dot { slot, size } => vec![format!("dot {}, {size}", colors[*slot])],
        StepSpec::Speed { value } => vec![format!("speed {value}")],
        StepSpec::Await => vec!["await done defer()".to_string()],
        StepSpec::Define { name, distance, degrees, size } => vec![
            format!("{name} = (c) ->"),
            "  pen c".to_string(),
            format!("  fd {distance}"),
            format!("  dot c, {size}"),
            format!("  rt {degrees}"),
        ],
        StepSpec::Call { name, slot } => vec![format!("{name} {}", colors[*slot])],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minilang::{execute, parse, DEFAULT_STEP_BUDGET};
    use crate::simulator::sample_population;

    #[test]
    fn deterministic_and_named() {
        let a = make_templates(70, 3);
        assert_eq!(a, make_templates(70, 3));
        let titles: std::collections::BTreeSet<_> = a.iter().map(|t| t.title.clone()).collect();
        assert_eq!(titles.len(), 70);
        assert!(titles.iter().all(|t| !t.to_lowercase().contains("name")));
    }

    #[test]
    fn goals_execute() {
        let templates = make_templates(64, 1);
        let pop = sample_population(30, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for t in &templates {
            for p in &pop {
                let goal = t.sample_goal(p, &mut rng).render();
                let result = execute(&parse(&goal), DEFAULT_STEP_BUDGET);
                assert!(result.success, "{goal}\n{result:?}");
            }
        }
    }
}
