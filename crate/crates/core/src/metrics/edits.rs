use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::minilang::{is_color, InstructionKind, Program};

/// Net added or removed lines above which a change counts as large.
pub const SMALL_EDIT_LINES: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EditType {
    SmallAddition,
    LargeAddition,
    SmallDeletion,
    LargeDeletion,
    ColorChange,
    NumberChange,
    CommentAddition,
    FunctionAddition,
}

impl EditType {
    pub const ALL: [EditType; 8] = [
        EditType::SmallAddition,
        EditType::LargeAddition,
        EditType::SmallDeletion,
        EditType::LargeDeletion,
        EditType::ColorChange,
        EditType::NumberChange,
        EditType::CommentAddition,
        EditType::FunctionAddition,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EditType::SmallAddition => "small-addition",
            EditType::LargeAddition => "large-addition",
            EditType::SmallDeletion => "small-deletion",
            EditType::LargeDeletion => "large-deletion",
            EditType::ColorChange => "color-change",
            EditType::NumberChange => "number-change",
            EditType::CommentAddition => "comment-addition",
            EditType::FunctionAddition => "function-addition",
        }
    }

    pub fn is_deletion(self) -> bool {
        matches!(self, EditType::SmallDeletion | EditType::LargeDeletion)
    }
}

impl std::fmt::Display for EditType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

fn line_tokens(line: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in line.char_indices() {
        let word = c.is_alphanumeric() || c == '_' || c == '.';
        match (word, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push(&line[s..i]);
                start = None;
            }
            _ => {}
        }
        if !word && !c.is_whitespace() {
            out.push(&line[i..i + c.len_utf8()]);
        }
    }
    if let Some(s) = start {
        out.push(&line[s..]);
    }
    out
}

fn is_number(token: &str) -> bool {
    token.parse::<f64>().is_ok()
}

fn is_word(token: &str) -> bool {
    token.chars().all(|c| c.is_alphabetic())
}

#[derive(Clone, Copy, PartialEq)]
enum TokenChange {
    Color,
    Number,
}

/// Classifies a same-length line-aligned change whose differing tokens are
/// all colors or all numbers.
fn substitution_kind(prev: &Program, next: &Program) -> Option<TokenChange> {
    if prev.lines.len() != next.lines.len() {
        return None;
    }
    let mut kind = None;
    for (a, b) in prev.lines.iter().zip(&next.lines) {
        if a.text == b.text {
            continue;
        }
        let (ta, tb) = (line_tokens(&a.text), line_tokens(&b.text));
        if ta.len() != tb.len() || a.text.len() - a.text.trim_start().len() != b.text.len() - b.text.trim_start().len() {
            return None;
        }
        for (x, y) in ta.iter().zip(&tb) {
            if x == y {
                continue;
            }
            let this = if is_word(x) && is_word(y) && (is_color(x) || is_color(y)) {
                TokenChange::Color
            } else if is_number(x) && is_number(y) {
                TokenChange::Number
            } else {
                return None;
            };
            match kind {
                None => kind = Some(this),
                Some(k) if k != this => return None,
                _ => {}
            }
        }
    }
    kind
}

/// Indices of lines outside a longest common subsequence of `a` and `b`.
fn line_diff<'a>(a: &[&'a str], b: &[&'a str]) -> (Vec<usize>, Vec<usize>) {
    let (n, m) = (a.len(), b.len());
    let mut lcs = vec![vec![0u32; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            lcs[i][j] = if a[i] == b[j] {
                lcs[i + 1][j + 1] + 1
            } else {
                lcs[i + 1][j].max(lcs[i][j + 1])
            };
        }
    }
    let (mut i, mut j) = (0, 0);
    let (mut deleted, mut added) = (Vec::new(), Vec::new());
    while i < n && j < m {
        if a[i] == b[j] {
            i += 1;
            j += 1;
        } else if lcs[i + 1][j] >= lcs[i][j + 1] {
            deleted.push(i);
            i += 1;
        } else {
            added.push(j);
            j += 1;
        }
    }
    deleted.extend(i..n);
    added.extend(j..m);
    (deleted, added)
}

/// Assigns one [`EditType`] to the change from `prev` to `next`.
///
/// Rules apply in order: color-only substitutions, number-only
/// substitutions, then the line diff. A non-negative net line change is an
/// addition (comment-only, containing a function definition, or small/large
/// by net size); a negative one is a small or large deletion.
pub fn classify_edit(prev: &Program, next: &Program) -> Result<EditType, MetricsError> {
    let a: Vec<&str> = prev.lines.iter().map(|l| l.text.as_str()).collect();
    let b: Vec<&str> = next.lines.iter().map(|l| l.text.as_str()).collect();
    if a == b {
        return Err(MetricsError::IdenticalPrograms);
    }
    match substitution_kind(prev, next) {
        Some(TokenChange::Color) => return Ok(EditType::ColorChange),
        Some(TokenChange::Number) => return Ok(EditType::NumberChange),
        None => {}
    }
    let (deleted, added) = line_diff(&a, &b);
    let net = added.len() as isize - deleted.len() as isize;
    if net >= 0 {
        let added_kinds: Vec<InstructionKind> = added.iter().map(|&j| next.lines[j].kind).collect();
        if net > 0 && added_kinds.iter().all(|k| *k == InstructionKind::Comment) {
            return Ok(EditType::CommentAddition);
        }
        if added_kinds.contains(&InstructionKind::FunctionDef) {
            return Ok(EditType::FunctionAddition);
        }
        Ok(if net as usize <= SMALL_EDIT_LINES {
            EditType::SmallAddition
        } else {
            EditType::LargeAddition
        })
    } else {
        Ok(if net.unsigned_abs() <= SMALL_EDIT_LINES {
            EditType::SmallDeletion
        } else {
            EditType::LargeDeletion
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minilang::parse;

    fn classify(a: &str, b: &str) -> EditType {
        classify_edit(&parse(a), &parse(b)).unwrap()
    }

    #[test]
    fn substitutions() {
        assert_eq!(classify("pen red", "pen blue"), EditType::ColorChange);
        assert_eq!(classify("pen red\nfd 10", "pen babyblue\nfd 10"), EditType::ColorChange);
        assert_eq!(classify("fd 10\nrt 90", "fd 15\nrt 90"), EditType::NumberChange);
        assert_eq!(classify("dot red, 10", "dot blue, 20"), EditType::SmallAddition);
    }

    #[test]
    fn additions() {
        assert_eq!(classify("", "fd 20"), EditType::SmallAddition);
        assert_eq!(classify("fd 20", "fd 20\n# body"), EditType::CommentAddition);
        assert_eq!(classify("fd 1", "fd 1\nfd 2\nfd 3\nfd 4"), EditType::LargeAddition);
        assert_eq!(classify("fd 1", "f = ->\n  fd 2\nfd 1"), EditType::FunctionAddition);
        assert_eq!(classify("fd 1", "fd 2"), EditType::NumberChange);
        assert_eq!(classify("fd 1", "rt 2"), EditType::SmallAddition);
    }

    #[test]
    fn deletions() {
        assert_eq!(classify("fd 1\nfd 2", "fd 1"), EditType::SmallDeletion);
        assert_eq!(classify("fd 1\nfd 2\nfd 3\nfd 4", "fd 1"), EditType::LargeDeletion);
        assert_eq!(classify("fd 1\n# x", "fd 1"), EditType::SmallDeletion);
    }

    #[test]
    fn identical_is_an_error() {
        assert!(classify_edit(&parse("fd 1"), &parse("fd 1")).is_err());
    }
}
