use std::fmt::Debug;

/// Maps a token surface to the form used for matching.
///
/// Implementations must be idempotent and case-insensitive.
pub trait Normalizer: Send + Sync + Debug {
    fn normalize(&self, surface: &str) -> String;
}

fn fold_case(surface: &str) -> String {
    surface
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| if c == 'ё' { 'е' } else { c })
        .collect()
}

/// Lowercasing only (`ё` folded to `е`).
#[derive(Debug, Clone, Copy, Default)]
pub struct LowercaseNormalizer;

impl Normalizer for LowercaseNormalizer {
    fn normalize(&self, surface: &str) -> String {
        fold_case(surface)
    }
}

// Russian inflectional endings, stripped longest-first.
const RUSSIAN_SUFFIXES: &[&str] = &[
    "ыми", "ими", "ами", "ями", "ого", "его", "ому", "ему", "ых", "их", "ый", "ий", "ой", "ей",
    "ая", "яя", "ое", "ее", "ые", "ие", "ую", "юю", "ым", "им", "ом", "ем", "ам", "ям", "ах", "ях",
    "ов", "ев", "ся", "сь", "ы", "и", "а", "я", "у", "ю", "е", "о", "ь", "й",
];

/// Lowercasing plus repeated stripping of Russian inflectional endings.
///
/// Stripping repeats until no ending applies, so the output is a fixed
/// point and the normalizer is idempotent. Only all-Cyrillic words are
/// stemmed; anything else is just lowercased.
#[derive(Debug, Clone)]
pub struct SuffixStripNormalizer {
    suffixes: Vec<Vec<char>>,
    min_stem: usize,
}

impl Default for SuffixStripNormalizer {
    fn default() -> Self {
        SuffixStripNormalizer::new(RUSSIAN_SUFFIXES.iter().copied(), 3)
    }
}

impl SuffixStripNormalizer {
    pub fn new<'a>(suffixes: impl IntoIterator<Item = &'a str>, min_stem: usize) -> Self {
        let mut suffixes: Vec<Vec<char>> = suffixes
            .into_iter()
            .filter(|s| !s.is_empty())
            .map(|s| fold_case(s).chars().collect())
            .collect();
        suffixes.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        suffixes.dedup();
        SuffixStripNormalizer {
            suffixes,
            min_stem: min_stem.max(1),
        }
    }

    fn strip_once(&self, word: &[char]) -> Option<usize> {
        self.suffixes
            .iter()
            .find(|s| word.len() >= self.min_stem + s.len() && word.ends_with(s))
            .map(|s| word.len() - s.len())
    }
}

fn is_cyrillic(c: char) -> bool {
    ('\u{0400}'..='\u{04FF}').contains(&c)
}

impl Normalizer for SuffixStripNormalizer {
    fn normalize(&self, surface: &str) -> String {
        let lower = fold_case(surface);
        if lower.is_empty() || !lower.chars().all(is_cyrillic) {
            return lower;
        }
        let mut word: Vec<char> = lower.chars().collect();
        while let Some(len) = self.strip_once(&word) {
            word.truncate(len);
        }
        word.into_iter().collect()
    }
}
