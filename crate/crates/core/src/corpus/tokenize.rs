use super::{Document, Normalizer, Token, TokenRange};

/// Lowercased tokens that, followed by a period, do not end a sentence.
pub const DEFAULT_ABBREVIATIONS: &[&str] = &[
    "т", "е", "д", "п", "др", "пр", "рис", "см", "табл", "напр", "им", "стр", "ср", "гл", "разд",
    "etc", "e", "g", "i", "fig", "eq", "al", "vs", "cf",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizerConfig {
    /// Split `веб-сервис` into three tokens instead of keeping the compound.
    pub split_hyphens: bool,
    pub abbreviations: Vec<String>,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            split_hyphens: false,
            abbreviations: DEFAULT_ABBREVIATIONS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

fn is_hyphen(c: char) -> bool {
    matches!(c, '-' | '\u{2010}' | '\u{2011}')
}

fn is_latin_letter(c: char) -> bool {
    c.is_ascii_alphabetic() || (('\u{00C0}'..='\u{024F}').contains(&c) && c != '×' && c != '÷')
}

/// A token is Latin-script when it has at least one letter and every letter is Latin.
pub fn is_latin_script(surface: &str) -> bool {
    let mut letters = surface.chars().filter(|c| c.is_alphabetic()).peekable();
    letters.peek().is_some() && letters.all(is_latin_letter)
}

pub(super) fn tokenize(
    config: &TokenizerConfig,
    normalizer: &dyn Normalizer,
    id: String,
    text: String,
) -> Document {
    let chars: Vec<char> = text.chars().collect();
    let mut spans: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_alphanumeric() {
            let start = i;
            i += 1;
            while i < chars.len() {
                if chars[i].is_alphanumeric() {
                    i += 1;
                } else if !config.split_hyphens
                    && is_hyphen(chars[i])
                    && i + 1 < chars.len()
                    && chars[i + 1].is_alphanumeric()
                {
                    i += 2;
                } else {
                    break;
                }
            }
            spans.push((start, i));
        } else {
            spans.push((i, i + 1));
            i += 1;
        }
    }

    let tokens: Vec<Token> = spans
        .iter()
        .map(|&(start, end)| {
            let surface: String = chars[start..end].iter().collect();
            Token {
                norm: normalizer.normalize(&surface),
                is_latin_script: is_latin_script(&surface),
                surface,
                start,
                end,
            }
        })
        .collect();

    let sentences = segment(config, &chars, &tokens);
    Document {
        id,
        text,
        tokens,
        sentences,
    }
}

pub(super) fn segment(config: &TokenizerConfig, chars: &[char], tokens: &[Token]) -> Vec<TokenRange> {
    let mut sentences = Vec::new();
    if tokens.is_empty() {
        return sentences;
    }
    let mut first = 0;
    for i in 0..tokens.len() - 1 {
        if ends_sentence(config, chars, tokens, i) {
            sentences.push(TokenRange::new(first, i));
            first = i + 1;
        }
    }
    sentences.push(TokenRange::new(first, tokens.len() - 1));
    sentences
}

fn ends_sentence(config: &TokenizerConfig, chars: &[char], tokens: &[Token], i: usize) -> bool {
    let tok = &tokens[i];
    if !matches!(tok.surface.as_str(), "." | "!" | "?") {
        return false;
    }
    let next = &tokens[i + 1];
    let gap_has_space = chars[tok.end..next.start].iter().any(|c| c.is_whitespace());
    let next_upper = next.surface.chars().next().is_some_and(char::is_uppercase);
    if !gap_has_space || !next_upper {
        return false;
    }
    if tok.surface == "." && i > 0 {
        let prev = &tokens[i - 1];
        if prev.end == tok.start {
            let lower = prev.surface.to_lowercase();
            if config.abbreviations.contains(&lower) {
                return false;
            }
        }
    }
    true
}
