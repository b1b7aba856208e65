//! Document model shared by every stage: tokens with character offsets,
//! sentence spans, and the annotation layers (terms, relations, links).

mod jsonl;
mod normalize;
mod tokenize;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::linker::LinkAnnotation;
use crate::relation::RelationInstance;

pub use jsonl::{
    read_annotations, read_annotations_from, write_annotations, write_annotations_to, CorpusError,
    DocumentRecord,
};
pub use normalize::{LowercaseNormalizer, Normalizer, SuffixStripNormalizer};
pub use tokenize::{is_latin_script, TokenizerConfig, DEFAULT_ABBREVIATIONS};

/// Inclusive token index range `[first, last]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct TokenRange {
    pub first: usize,
    pub last: usize,
}

impl TokenRange {
    pub fn new(first: usize, last: usize) -> Self {
        debug_assert!(first <= last);
        TokenRange { first, last }
    }

    pub fn single(index: usize) -> Self {
        TokenRange::new(index, index)
    }

    pub fn len(&self) -> usize {
        self.last - self.first + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, index: usize) -> bool {
        self.first <= index && index <= self.last
    }

    pub fn overlaps(&self, other: &TokenRange) -> bool {
        self.first <= other.last && other.first <= self.last
    }

    /// True when `other` lies entirely inside `self`.
    pub fn covers(&self, other: &TokenRange) -> bool {
        self.first <= other.first && other.last <= self.last
    }

    pub fn indices(&self) -> std::ops::RangeInclusive<usize> {
        self.first..=self.last
    }
}

impl From<[usize; 2]> for TokenRange {
    fn from(v: [usize; 2]) -> Self {
        TokenRange { first: v[0], last: v[1] }
    }
}

impl From<TokenRange> for [usize; 2] {
    fn from(r: TokenRange) -> Self {
        [r.first, r.last]
    }
}

impl fmt::Display for TokenRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.first, self.last)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    /// Character (not byte) offset of the first character.
    pub start: usize,
    /// Character offset one past the last character.
    pub end: usize,
    pub norm: String,
    pub is_latin_script: bool,
}

impl Token {
    /// Punctuation-only tokens carry no letter or digit.
    pub fn is_word(&self) -> bool {
        self.surface.chars().any(char::is_alphanumeric)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub tokens: Vec<Token>,
    pub sentences: Vec<TokenRange>,
}

impl Document {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Index of the sentence containing token `index`.
    pub fn sentence_of(&self, index: usize) -> Option<usize> {
        self.sentences
            .binary_search_by(|s| {
                if s.last < index {
                    std::cmp::Ordering::Less
                } else if s.first > index {
                    std::cmp::Ordering::Greater
                } else {
                    std::cmp::Ordering::Equal
                }
            })
            .ok()
    }

    pub fn norms(&self, range: TokenRange) -> impl Iterator<Item = &str> {
        self.tokens[range.first..=range.last]
            .iter()
            .map(|t| t.norm.as_str())
    }

    /// Space-joined norms of a range, the key format used by dictionaries and the KB index.
    pub fn norm_key(&self, range: TokenRange) -> String {
        self.norms(range).collect::<Vec<_>>().join(" ")
    }

    /// Original text covered by a token range, including inner whitespace.
    pub fn span_text(&self, range: TokenRange) -> String {
        let start = self.tokens[range.first].start;
        let end = self.tokens[range.last].end;
        self.text.chars().skip(start).take(end - start).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TermSource {
    Dictionary,
    Model,
    Gold,
    Merged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BioLabel {
    Begin,
    Inside,
    Outside,
}

impl fmt::Display for BioLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BioLabel::Begin => "B-TERM",
            BioLabel::Inside => "I-TERM",
            BioLabel::Outside => "O",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TermAnnotation {
    pub range: TokenRange,
    pub source: TermSource,
}

impl TermAnnotation {
    pub fn new(range: TokenRange, source: TermSource) -> Self {
        TermAnnotation { range, source }
    }

    /// Labels for the covered tokens: one `B-TERM` followed by `I-TERM`s.
    pub fn bio_labels(&self) -> Vec<BioLabel> {
        let mut labels = vec![BioLabel::Inside; self.range.len()];
        labels[0] = BioLabel::Begin;
        labels
    }
}

/// Per-token BIO sequence for a set of non-overlapping terms.
pub fn bio_sequence(len: usize, terms: &[TermAnnotation]) -> Vec<BioLabel> {
    let mut labels = vec![BioLabel::Outside; len];
    for term in terms {
        for (offset, i) in term.range.indices().enumerate() {
            labels[i] = if offset == 0 {
                BioLabel::Begin
            } else {
                BioLabel::Inside
            };
        }
    }
    labels
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedDocument {
    pub document: Document,
    /// Top-level, mutually non-overlapping terms.
    pub terms: Vec<TermAnnotation>,
    /// Gold terms nested inside a top-level term; never produced by the tagger.
    pub nested_terms: Vec<TermAnnotation>,
    pub relations: Vec<RelationInstance>,
    pub links: Vec<LinkAnnotation>,
}

impl AnnotatedDocument {
    pub fn new(document: Document) -> Self {
        AnnotatedDocument {
            document,
            terms: Vec::new(),
            nested_terms: Vec::new(),
            relations: Vec::new(),
            links: Vec::new(),
        }
    }

    pub fn with_terms(document: Document, mut terms: Vec<TermAnnotation>) -> Self {
        terms.sort_by_key(|t| t.range);
        AnnotatedDocument {
            terms,
            ..AnnotatedDocument::new(document)
        }
    }
}

/// Tokenizer settings plus the normalizer that fills `Token::norm`.
///
/// Every component that compares text (dictionary, KB index, embeddings,
/// patterns) must share one analyzer so that keys line up.
#[derive(Debug, Clone)]
pub struct Analyzer {
    pub config: TokenizerConfig,
    normalizer: Arc<dyn Normalizer>,
}

impl Default for Analyzer {
    fn default() -> Self {
        Analyzer::new(TokenizerConfig::default(), Arc::new(SuffixStripNormalizer::default()))
    }
}

impl Analyzer {
    pub fn new(config: TokenizerConfig, normalizer: Arc<dyn Normalizer>) -> Self {
        Analyzer { config, normalizer }
    }

    pub fn normalize(&self, surface: &str) -> String {
        self.normalizer.normalize(surface)
    }

    pub fn normalizer(&self) -> Arc<dyn Normalizer> {
        Arc::clone(&self.normalizer)
    }

    pub fn tokenize(&self, id: impl Into<String>, text: impl Into<String>) -> Document {
        tokenize::tokenize(&self.config, self.normalizer.as_ref(), id.into(), text.into())
    }

    /// Sentence spans for already-tokenized text.
    pub fn segment(&self, chars: &[char], tokens: &[Token]) -> Vec<TokenRange> {
        tokenize::segment(&self.config, chars, tokens)
    }

    /// Norms of every token in a free-standing phrase.
    pub fn phrase_norms(&self, phrase: &str) -> Vec<String> {
        self.tokenize("", phrase)
            .tokens
            .into_iter()
            .map(|t| t.norm)
            .collect()
    }

    /// Space-joined norms; empty for phrases without tokens.
    pub fn phrase_key(&self, phrase: &str) -> String {
        self.phrase_norms(phrase).join(" ")
    }
}

/// Tokenize with the default analyzer.
pub fn tokenize(text: &str) -> Document {
    Analyzer::default().tokenize("", text)
}

/// Normalize with the default normalizer.
pub fn normalize(surface: &str) -> String {
    SuffixStripNormalizer::default().normalize(surface)
}
