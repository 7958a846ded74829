/// Character-level Levenshtein distance with unit costs.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let above = row[j + 1];
            row[j + 1] = if ca == cb {
                diag
            } else {
                1 + diag.min(above).min(row[j])
            };
            diag = above;
        }
    }
    row[b.len()]
}

/// Fraction of transitions that move further from the final state, or
/// `None` for traces shorter than two states.
pub fn backtracking_ratio<S: AsRef<str>>(states: &[S]) -> Option<f64> {
    let goal = states.last()?.as_ref();
    if states.len() < 2 {
        return None;
    }
    let distances: Vec<usize> = states.iter().map(|s| edit_distance(s.as_ref(), goal)).collect();
    let increases = distances.windows(2).filter(|w| w[1] > w[0]).count();
    Some(increases as f64 / (states.len() - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn classic_pairs() {
        assert_eq!(edit_distance("kitten", "sitting"), 3);
        assert_eq!(edit_distance("", "ab"), 2);
        assert_eq!(edit_distance("abc", "abc"), 0);
        assert_eq!(edit_distance("héllo", "hello"), 1);
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(backtracking_ratio(&["fd 10", "fd 99", "fd 10"]), Some(0.5));
        assert_eq!(backtracking_ratio(&["fd 10"]), None);
        assert_eq!(backtracking_ratio::<&str>(&[]), None);
        assert_eq!(backtracking_ratio(&["fd 20", "fd 20\nrt 90"]), Some(0.0));
    }

    proptest! {
        #[test]
        fn metric_axioms(a in "[a-c ]{0,12}", b in "[a-c ]{0,12}", c in "[a-c ]{0,12}") {
            let ab = edit_distance(&a, &b);
            prop_assert_eq!(ab, edit_distance(&b, &a));
            prop_assert_eq!(edit_distance(&a, &a), 0);
            prop_assert_eq!(ab == 0, a == b);
            prop_assert!(edit_distance(&a, &c) <= ab + edit_distance(&b, &c));
            prop_assert!(ab <= a.chars().count().max(b.chars().count()));
        }
    }
}
