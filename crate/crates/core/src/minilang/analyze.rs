use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::lexicon::{color_index, COLORS};
use super::parse::{InstructionKind, Program};

/// Keywords counted by [`Analyzer::default`].
pub const DEFAULT_KEYWORDS: [&str; 11] = [
    "turtle", "await", "forever", "stop", "speed", "pen", "dot", "fd", "bk", "rt", "lt",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeFeatures {
    pub keyword_counts: BTreeMap<String, usize>,
    /// One entry per lexicon color, in [`COLORS`] order.
    pub color_counts: Vec<usize>,
    pub comment_count: usize,
    pub line_count: usize,
}

impl CodeFeatures {
    pub fn keyword(&self, word: &str) -> usize {
        self.keyword_counts.get(word).copied().unwrap_or(0)
    }

    pub fn color_total(&self) -> usize {
        self.color_counts.iter().sum()
    }
}

/// Static feature extractor with a configurable keyword list.
#[derive(Clone, Debug)]
pub struct Analyzer {
    keywords: Vec<String>,
}

impl Default for Analyzer {
    fn default() -> Self {
        Self::new(DEFAULT_KEYWORDS.iter().map(|s| s.to_string()))
    }
}

fn words(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|w| !w.is_empty())
}

impl Analyzer {
    pub fn new(keywords: impl IntoIterator<Item = String>) -> Self {
        let mut keywords: Vec<String> = keywords.into_iter().collect();
        for required in ["turtle", "await"] {
            if !keywords.iter().any(|k| k == required) {
                keywords.push(required.to_string());
            }
        }
        Self { keywords }
    }

    pub fn keywords(&self) -> &[String] {
        &self.keywords
    }

    /// Keyword occurrences are whole-word matches anywhere in the source;
    /// colors are counted on non-comment lines only.
    pub fn analyze(&self, program: &Program) -> CodeFeatures {
        let mut keyword_counts: BTreeMap<String, usize> =
            self.keywords.iter().map(|k| (k.clone(), 0)).collect();
        let mut color_counts = vec![0; COLORS.len()];
        let mut comment_count = 0;
        for line in &program.lines {
            for w in words(&line.text) {
                if let Some(n) = keyword_counts.get_mut(w) {
                    *n += 1;
                }
            }
            if line.kind == InstructionKind::Comment {
                comment_count += 1;
                continue;
            }
            for w in words(&line.text) {
                if let Some(i) = color_index(w) {
                    color_counts[i] += 1;
                }
            }
        }
        CodeFeatures {
            keyword_counts,
            color_counts,
            comment_count,
            line_count: program.lines.len(),
        }
    }
}

/// [`Analyzer::analyze`] with the default keyword list.
pub fn analyze(program: &Program) -> CodeFeatures {
    Analyzer::default().analyze(program)
}

#[cfg(test)]
mod tests {
    use super::super::parse::parse;
    use super::*;

    #[test]
    fn counts_comments_and_colors() {
        let f = analyze(&parse("# hi\npen red\npen red"));
        assert_eq!(f.comment_count, 1);
        assert_eq!(f.color_counts[color_index("red").unwrap()], 2);
        assert_eq!(f.line_count, 3);
    }

    #[test]
    fn empty_program_is_all_zero() {
        let f = analyze(&parse(""));
        assert_eq!(f.comment_count, 0);
        assert_eq!(f.line_count, 0);
        assert!(f.color_counts.iter().all(|&c| c == 0));
        assert!(f.keyword_counts.values().all(|&c| c == 0));
        assert_eq!(f.color_counts.len(), COLORS.len());
    }

    #[test]
    fn counts_await() {
        let f = analyze(&parse("await read 'x'"));
        assert_eq!(f.keyword("await"), 1);
    }

    #[test]
    fn required_keywords_are_always_present() {
        let a = Analyzer::new(vec!["speed".to_string()]);
        assert!(a.keywords().iter().any(|k| k == "turtle"));
        assert!(a.keywords().iter().any(|k| k == "await"));
    }

    #[test]
    fn comment_colors_are_ignored() {
        let f = analyze(&parse("# red hat\ndot blue, 20"));
        assert_eq!(f.color_total(), 1);
    }
}
