pub const COLORS: [&str; 6] = ["red", "blue", "green", "yellow", "pink", "purple"];
pub const SHAPES: [&str; 6] = ["ball", "cube", "cone", "cylinder", "ring", "star"];
pub const SIZES: [&str; 2] = ["small", "large"];

/// Feature depth per cell: shape slots plus "empty", colors, sizes.
pub const FEATURE_DEPTH: usize = SHAPES.len() + 1 + COLORS.len() + SIZES.len();
pub const EMPTY_SLOT: usize = SHAPES.len();
pub const COLOR_OFFSET: usize = SHAPES.len() + 1;
pub const SIZE_OFFSET: usize = COLOR_OFFSET + COLORS.len();

/// Global concept vector: one entry per attribute word.
pub const CONCEPT_DIM: usize = COLORS.len() + SHAPES.len() + SIZES.len();

pub fn concept_words() -> impl Iterator<Item = &'static str> {
    COLORS.iter().chain(&SHAPES).chain(&SIZES).copied()
}

/// Word classes used when swapping a key word to build a plausible
/// distractor. A swap stays within one class.
pub fn content_word_classes() -> Vec<Vec<String>> {
    let owned = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let mut nouns = owned(&SHAPES);
    nouns.extend(owned(&["object", "objects", "color", "shape"]));
    let mut adjectives = owned(&COLORS);
    adjectives.extend(owned(&SIZES));
    vec![
        owned(&["is", "are"]),
        nouns,
        adjectives,
        (0..=10).map(|d| d.to_string()).collect(),
    ]
}

pub fn color_index(word: &str) -> Option<usize> {
    COLORS.iter().position(|&c| c == word)
}

pub fn shape_index(word: &str) -> Option<usize> {
    SHAPES.iter().position(|&s| s == word)
}

pub fn size_index(word: &str) -> Option<usize> {
    SIZES.iter().position(|&s| s == word)
}
