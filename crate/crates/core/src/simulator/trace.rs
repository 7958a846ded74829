use chrono::{NaiveDate, NaiveTime};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use super::profile::StudentProfile;
use super::templates::{Goal, TitleTemplate};
use super::Systematic;
use crate::corpus::{CorpusError, TraceEvent, TraceRecord};
use crate::metrics::edit_distance;
use crate::minilang::{is_color, COLORS};

/// Probability that a forward edit adds two units instead of one.
const DOUBLE_STEP: f64 = 0.25;
const EXCURSION_ATTEMPTS: usize = 8;

const MISSPELLED: [(&str, &str); 16] = [
    ("red", "redd"),
    ("orange", "ornage"),
    ("yellow", "yelow"),
    ("green", "gren"),
    ("blue", "babyblue"),
    ("purple", "purpel"),
    ("pink", "pinck"),
    ("brown", "brwn"),
    ("black", "blak"),
    ("white", "whit"),
    ("gray", "grey"),
    ("cyan", "cyann"),
    ("magenta", "magneta"),
    ("lime", "lyme"),
    ("navy", "navvy"),
    ("gold", "golld"),
];

fn misspell(color: &str) -> Option<&'static str> {
    MISSPELLED.iter().find(|(c, _)| *c == color).map(|(_, m)| *m)
}

/// Unix time of a random daytime moment in `year`.
fn random_moment<R: Rng>(year: i32, rng: &mut R) -> i64 {
    let day = NaiveDate::from_ymd_opt(year, 1, 1).expect("valid year") + chrono::Days::new(rng.random_range(0..360));
    let time = NaiveTime::from_num_seconds_from_midnight_opt(rng.random_range(8 * 3600..20 * 3600), 0)
        .expect("valid time of day");
    day.and_time(time).and_utc().timestamp()
}

/// Introduces an interpreter-detectable fault into one top-level line of
/// the freshly added units; false when none of them can carry one.
fn corrupt<R: Rng>(lines: &mut [String], first_new: usize, rng: &mut R) -> bool {
    let candidates: Vec<usize> = (first_new..lines.len())
        .filter(|&i| {
            let l = &lines[i];
            !l.starts_with(' ') && !l.starts_with('#') && !l.contains("->")
        })
        .collect();
    let Some(&i) = candidates.choose(rng) else {
        return false;
    };
    let line = &lines[i];
    let words: Vec<&str> = line.split([' ', ',']).filter(|w| !w.is_empty()).collect();
    let color = words.iter().find(|w| is_color(w)).copied();
    let broken = match color {
        Some(c) if rng.random_bool(0.7) => line.replacen(c, misspell(c).expect("every color has a typo"), 1),
        _ => {
            let head = words[0];
            let typo = format!("{head}{}", &head[head.len() - 1..]);
            line.replacen(head, &typo, 1)
        }
    };
    lines[i] = broken;
    true
}

/// A state that is further from `goal` than `lines`: a stray instruction,
/// a wrong color, or needed units removed.
fn excursion<R: Rng>(goal: &Goal, placed: usize, rng: &mut R) -> Vec<String> {
    let current = goal.lines(placed);
    let target = goal.render();
    let base = edit_distance(&current.join("\n"), &target);
    for _ in 0..EXCURSION_ATTEMPTS {
        let mut lines = current.clone();
        match rng.random_range(0..3) {
            0 => {
                let stray = match rng.random_range(0..4) {
                    0 => format!("fd {}", rng.random_range(1..200)),
                    1 => format!("rt {}", rng.random_range(1..360)),
                    2 => format!("pen {}", COLORS.choose(rng).unwrap()),
                    _ => format!("dot {}, {}", COLORS.choose(rng).unwrap(), rng.random_range(5..80)),
                };
                let at = rng.random_range(0..=lines.len());
                lines.insert(at, stray);
            }
            1 => {
                let colored: Vec<(usize, &str)> = lines
                    .iter()
                    .enumerate()
                    .filter(|(_, l)| !l.trim_start().starts_with('#'))
                    .flat_map(|(i, l)| {
                        l.split([' ', ',']).filter(|w| is_color(w)).map(move |w| (i, w))
                    })
                    .collect();
                let Some(&(i, old)) = colored.choose(rng) else {
                    continue;
                };
                let new = *COLORS.iter().filter(|c| **c != old).collect::<Vec<_>>().choose(rng).unwrap();
                lines[i] = lines[i].replacen(old, new, 1);
            }
            _ => {
                let unit = rng.random_range(0..placed);
                let count = if rng.random_bool(0.3) { 2 } else { 1 }.min(placed - unit);
                lines = goal.units[..unit]
                    .iter()
                    .chain(&goal.units[unit + count..placed])
                    .flatten()
                    .cloned()
                    .collect();
            }
        }
        if edit_distance(&lines.join("\n"), &target) > base {
            return lines;
        }
    }
    // Dropping the most recent unit always moves away from the goal.
    goal.lines(placed - 1)
}

/// A faulty version of the forward edit from `before` units to `lines`
/// that is still closer to the goal than the previous state and farther
/// than its repair.
fn faulty_step<R: Rng>(goal: &Goal, before: usize, lines: &[String], rng: &mut R) -> Option<String> {
    let target = goal.render();
    let previous = edit_distance(&goal.lines(before).join("\n"), &target);
    let repaired = edit_distance(&lines.join("\n"), &target);
    let first_new = goal.lines(before).len();
    for _ in 0..EXCURSION_ATTEMPTS {
        let mut broken = lines.to_vec();
        if !corrupt(&mut broken, first_new, rng) {
            return None;
        }
        let state = broken.join("\n");
        let d = edit_distance(&state, &target);
        if d < previous && d > repaired {
            return Some(state);
        }
    }
    None
}

/// Program states of one student working toward `goal`.
///
/// Forward edits add one or two goal units; with probability `1 - skill`
/// one added line carries a fault that the next edit fixes. Before each
/// forward edit after the first, the student makes an excursion away from
/// the goal with probability `backtrack_propensity`, sampled
/// systematically, and repairs it in the following edit.
pub fn edit_states<R: Rng>(goal: &Goal, profile: &StudentProfile, rng: &mut R) -> Vec<String> {
    let n = goal.units.len();
    let mut states = Vec::new();
    let mut placed = 0;
    let mut repair = false;
    let mut away = Systematic::new(rng);
    loop {
        if repair {
            states.push(goal.lines(placed).join("\n"));
            repair = false;
            continue;
        }
        if placed == n {
            break;
        }
        if placed > 0 && away.fire(profile.backtrack_propensity) {
            states.push(excursion(goal, placed, rng).join("\n"));
            repair = true;
            continue;
        }
        let step = if rng.random_bool(DOUBLE_STEP) { 2 } else { 1 };
        let before = placed;
        placed = (placed + step).min(n);
        let lines = goal.lines(placed);
        let mut state = lines.join("\n");
        if rng.random_bool((1.0 - profile.skill).clamp(0.0, 1.0)) {
            if let Some(faulty) = faulty_step(goal, before, &lines, rng) {
                state = faulty;
                repair = true;
            }
        }
        states.push(state);
    }
    states
}

/// One simulated trace with timestamps in the student's active year.
pub fn simulate_trace_with<R: Rng>(profile: &StudentProfile, template: &TitleTemplate, start: i64, rng: &mut R) -> TraceRecord {
    let goal = template.sample_goal(profile, rng);
    let states = edit_states(&goal, profile, rng);
    let gaps = Exp::new(1.0 / profile.pace.max(1e-6)).expect("positive rate");
    let mut ts = start;
    let events = states
        .into_iter()
        .enumerate()
        .map(|(i, code)| {
            if i > 0 {
                ts += 1 + gaps.sample(rng).round() as i64;
            }
            TraceEvent { ts, code }
        })
        .collect();
    TraceRecord::new(profile.student_id.clone(), template.title.clone(), events)
}

pub fn simulate_trace(profile: &StudentProfile, template: &TitleTemplate, seed: u64) -> TraceRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = random_moment(profile.active_year, &mut rng);
    simulate_trace_with(profile, template, start, &mut rng)
}

/// Traces for every student: a uniform count from `range`, titles drawn by
/// popularity, and start times ordered within the active year. Student `i`
/// uses RNG stream `i` of `seed`.
pub fn build_corpus(
    population: &[StudentProfile],
    templates: &[TitleTemplate],
    range: (usize, usize),
    seed: u64,
) -> Result<Vec<TraceRecord>, CorpusError> {
    let (lo, hi) = range;
    if lo == 0 || lo > hi {
        return Err(CorpusError::InvalidArguments(format!("invalid traces-per-student range [{lo}, {hi}]")));
    }
    if templates.is_empty() {
        return Err(CorpusError::InvalidArguments("no title templates".into()));
    }
    let popularity = rand::distr::weighted::WeightedIndex::new(templates.iter().map(|t| t.weight))
        .map_err(|e| CorpusError::InvalidArguments(format!("template weights: {e}")))?;
    let per_student: Vec<Vec<TraceRecord>> = population
        .iter()
        .enumerate()
        .map(|(index, profile)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(index as u64);
            let count = rng.random_range(lo..=hi);
            let mut starts: Vec<i64> = (0..count).map(|_| random_moment(profile.active_year, &mut rng)).collect();
            starts.sort_unstable();
            starts
                .into_iter()
                .map(|start| {
                    let template = &templates[popularity.sample(&mut rng)];
                    simulate_trace_with(profile, template, start, &mut rng)
                })
                .collect()
        })
        .collect();
    Ok(per_student.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::backtracking_ratio;
    use crate::minilang::{execute, parse, DEFAULT_STEP_BUDGET};
    use crate::simulator::{make_templates, sample_population};

    #[test]
    fn zero_backtracking_and_comments() {
        let templates = make_templates(20, 1);
        let mut pop = sample_population(40, 2);
        for p in &mut pop {
            p.backtrack_propensity = 0.0;
            p.comment_rate = 0.0;
        }
        for (i, p) in pop.iter().enumerate() {
            let r = simulate_trace(p, &templates[i % 20], i as u64);
            assert_eq!(backtracking_ratio(&r.states()).unwrap_or(0.0), 0.0);
            assert!(r.states().iter().all(|s| !s.lines().any(|l| l.trim_start().starts_with('#'))));
        }
    }

    #[test]
    fn goal_reaching_and_fault_states() {
        let templates = make_templates(30, 4);
        let pop = sample_population(60, 5);
        let corpus = build_corpus(&pop, &templates, (2, 4), 6).unwrap();
        let mut failing = 0;
        for r in &corpus {
            let last = r.final_program().unwrap();
            assert!(execute(&parse(last), DEFAULT_STEP_BUDGET).success, "{last}");
            let ts = r.timestamps();
            assert!(ts.windows(2).all(|w| w[0] < w[1]));
            failing += r.states().iter().filter(|s| !execute(&parse(s), DEFAULT_STEP_BUDGET).success).count();
        }
        assert!(failing > 0);
    }

    #[test]
    fn corpus_counts_and_determinism() {
        let templates = make_templates(30, 4);
        let pop = sample_population(25, 5);
        let one = build_corpus(&pop, &templates, (1, 1), 3).unwrap();
        assert_eq!(one.len(), 25);
        let many = build_corpus(&pop, &templates, (20, 200), 3).unwrap();
        for p in &pop {
            let n = many.iter().filter(|r| r.student_id == p.student_id).count();
            assert!((20..=200).contains(&n));
        }
        assert_eq!(many, build_corpus(&pop, &templates, (20, 200), 3).unwrap());
        assert!(build_corpus(&pop, &templates, (3, 2), 3).is_err());
    }
}
