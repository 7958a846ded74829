//! The fixed color lexicon.

/// Colors accepted by `pen` and `dot`. The order defines the layout of
/// color count vectors and never changes.
pub const COLORS: [&str; 16] = [
    "red", "blue", "green", "magenta", "orange", "yellow", "black", "white", "purple", "pink",
    "gray", "brown", "cyan", "lime", "navy", "gold",
];

pub fn color_index(name: &str) -> Option<usize> {
    COLORS.iter().position(|c| *c == name)
}

pub fn is_color(name: &str) -> bool {
    color_index(name).is_some()
}
