//! Pattern-based relation classification between term pairs inside one
//! sentence, and the pair-sampling policy used to build relation datasets.
//!
//! Pattern file syntax, one pattern per line:
//!
//! ```text
//! # comment
//! PART-OF : ARG1 является частью ARG2
//! USED-FOR : ARG1 *2 для ARG2
//! COMPARE directional=false : ARG1 и ARG2
//! ```
//!
//! `*k` matches between 0 and `k` arbitrary tokens. Literals are normalized
//! with the same analyzer as the documents they are matched against.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{AnnotatedDocument, Analyzer, Document, TokenRange};

/// Starter patterns shipped with the crate; illustrative and replaceable.
pub const STARTER_PATTERNS: &str = include_str!("../data/patterns.ru.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RelationLabel {
    Compare,
    HyponymOf,
    NoRelation,
    PartOf,
    UsedFor,
}

impl RelationLabel {
    pub const ALL: [RelationLabel; 5] = [
        RelationLabel::Compare,
        RelationLabel::HyponymOf,
        RelationLabel::NoRelation,
        RelationLabel::PartOf,
        RelationLabel::UsedFor,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RelationLabel::Compare => "COMPARE",
            RelationLabel::HyponymOf => "HYPONYM-OF",
            RelationLabel::NoRelation => "NO-RELATION",
            RelationLabel::PartOf => "PART-OF",
            RelationLabel::UsedFor => "USED-FOR",
        }
    }
}

impl fmt::Display for RelationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown relation label {0:?}")]
pub struct UnknownLabel(pub String);

impl FromStr for RelationLabel {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RelationLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| UnknownLabel(s.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum RelationError {
    #[error("relation arguments {0} and {1} are identical or overlap")]
    Overlap(TokenRange, TokenRange),
    #[error("relation arguments {0} and {1} are not inside a single sentence")]
    CrossSentence(TokenRange, TokenRange),
    #[error("pattern line {line}: {message}")]
    Pattern { line: usize, message: String },
    #[error("cannot read pattern file {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RelationInstance {
    pub arg1: TokenRange,
    pub arg2: TokenRange,
    pub label: RelationLabel,
    pub sentence_index: usize,
}

impl RelationInstance {
    pub fn new(
        doc: &Document,
        arg1: TokenRange,
        arg2: TokenRange,
        label: RelationLabel,
    ) -> Result<Self, RelationError> {
        if arg1.overlaps(&arg2) {
            return Err(RelationError::Overlap(arg1, arg2));
        }
        let sentence = doc.sentence_of(arg1.first);
        let same = sentence.is_some()
            && [arg1.last, arg2.first, arg2.last]
                .iter()
                .all(|&i| doc.sentence_of(i) == sentence);
        match sentence {
            Some(s) if same => Ok(RelationInstance {
                arg1,
                arg2,
                label,
                sentence_index: s,
            }),
            _ => Err(RelationError::CrossSentence(arg1, arg2)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PatternElement {
    Arg1,
    Arg2,
    Literal(String),
    /// Between 0 and `max` arbitrary tokens.
    Gap(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    pub label: RelationLabel,
    pub elements: Vec<PatternElement>,
    /// When false the pattern may also bind ARG1 to the later term.
    pub directional: bool,
}

impl Pattern {
    pub fn parse(line: &str, analyzer: &Analyzer) -> Result<Pattern, String> {
        let (head, body) = line
            .split_once(':')
            .ok_or("expected `LABEL : elements`")?;
        let mut head_parts = head.split_whitespace();
        let label: RelationLabel = head_parts
            .next()
            .ok_or("missing label")?
            .parse()
            .map_err(|e: UnknownLabel| e.to_string())?;
        if label == RelationLabel::NoRelation {
            return Err("patterns cannot produce NO-RELATION".into());
        }
        let mut directional = true;
        for opt in head_parts {
            match opt.split_once('=') {
                Some(("directional", v)) => {
                    directional = v.parse().map_err(|_| format!("bad directional value {v:?}"))?
                }
                _ => return Err(format!("unknown option {opt:?}")),
            }
        }

        let mut elements = Vec::new();
        for item in body.split_whitespace() {
            let element = match item {
                "ARG1" => PatternElement::Arg1,
                "ARG2" => PatternElement::Arg2,
                _ => match item.strip_prefix('*') {
                    Some(k) if !k.is_empty() => PatternElement::Gap(
                        k.parse().map_err(|_| format!("bad wildcard {item:?}"))?,
                    ),
                    _ => {
                        let norms = analyzer.phrase_norms(item);
                        if norms.is_empty() {
                            return Err(format!("literal {item:?} has no tokens"));
                        }
                        for n in norms {
                            elements.push(PatternElement::Literal(n));
                        }
                        continue;
                    }
                },
            };
            elements.push(element);
        }
        let count = |e: &PatternElement| elements.iter().filter(|x| *x == e).count();
        if count(&PatternElement::Arg1) != 1 || count(&PatternElement::Arg2) != 1 {
            return Err("pattern needs exactly one ARG1 and one ARG2".into());
        }
        Ok(Pattern {
            label,
            elements,
            directional,
        })
    }

    /// Does the pattern align with the sentence when ARG1/ARG2 are bound to
    /// the given ranges?
    fn matches_bound(&self, doc: &Document, sentence: TokenRange, a1: TokenRange, a2: TokenRange) -> bool {
        (sentence.first..=sentence.last + 1)
            .any(|start| self.match_from(doc, sentence, a1, a2, 0, start))
    }

    fn match_from(
        &self,
        doc: &Document,
        sentence: TokenRange,
        a1: TokenRange,
        a2: TokenRange,
        elem: usize,
        pos: usize,
    ) -> bool {
        let Some(element) = self.elements.get(elem) else {
            return true;
        };
        let end = sentence.last + 1;
        match element {
            PatternElement::Arg1 | PatternElement::Arg2 => {
                let arg = if *element == PatternElement::Arg1 { a1 } else { a2 };
                pos == arg.first && self.match_from(doc, sentence, a1, a2, elem + 1, arg.last + 1)
            }
            PatternElement::Literal(norm) => {
                pos < end
                    && doc.tokens[pos].norm == *norm
                    && self.match_from(doc, sentence, a1, a2, elem + 1, pos + 1)
            }
            PatternElement::Gap(max) => (0..=*max)
                .take_while(|skip| pos + skip <= end)
                .any(|skip| self.match_from(doc, sentence, a1, a2, elem + 1, pos + skip)),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PatternSet {
    pub patterns: Vec<Pattern>,
}

impl PatternSet {
    pub fn parse(text: &str, analyzer: &Analyzer) -> Result<PatternSet, RelationError> {
        let mut patterns = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let pattern = Pattern::parse(line, analyzer).map_err(|message| RelationError::Pattern {
                line: i + 1,
                message,
            })?;
            patterns.push(pattern);
        }
        Ok(PatternSet { patterns })
    }

    pub fn load(path: impl AsRef<Path>, analyzer: &Analyzer) -> Result<PatternSet, RelationError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| RelationError::Io {
            path: path.display().to_string(),
            source,
        })?;
        PatternSet::parse(&text, analyzer)
    }

    pub fn starter(analyzer: &Analyzer) -> PatternSet {
        PatternSet::parse(STARTER_PATTERNS, analyzer).expect("starter patterns are valid")
    }
}

/// Outcome of classifying one text-ordered pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Classification {
    pub label: RelationLabel,
    /// The matching pattern bound ARG1 to the later term.
    pub reversed: bool,
}

/// Label for a pair of same-sentence terms: the first pattern (file order)
/// that aligns wins, NO-RELATION otherwise.
pub fn classify(doc: &Document, arg1: TokenRange, arg2: TokenRange, patterns: &PatternSet) -> RelationLabel {
    classify_oriented(doc, arg1, arg2, patterns).label
}

pub fn classify_oriented(
    doc: &Document,
    arg1: TokenRange,
    arg2: TokenRange,
    patterns: &PatternSet,
) -> Classification {
    let none = Classification {
        label: RelationLabel::NoRelation,
        reversed: false,
    };
    let Some(s) = doc.sentence_of(arg1.first) else {
        return none;
    };
    let sentence = doc.sentences[s];
    if !sentence.covers(&arg1) || !sentence.covers(&arg2) || arg1.overlaps(&arg2) {
        return none;
    }
    for p in &patterns.patterns {
        if p.matches_bound(doc, sentence, arg1, arg2) {
            return Classification {
                label: p.label,
                reversed: false,
            };
        }
        if !p.directional && p.matches_bound(doc, sentence, arg2, arg1) {
            return Classification {
                label: p.label,
                reversed: true,
            };
        }
    }
    none
}

/// Tokens strictly between two non-overlapping ranges.
pub fn gap_tokens(a: TokenRange, b: TokenRange) -> usize {
    let (left, right) = if a.first <= b.first { (a, b) } else { (b, a) };
    right.first.saturating_sub(left.last + 1)
}

/// All text-ordered pairs of terms sharing a sentence.
pub fn sentence_pairs(doc: &AnnotatedDocument) -> Vec<(TokenRange, TokenRange)> {
    let d = &doc.document;
    let mut ranges: Vec<TokenRange> = doc.terms.iter().map(|t| t.range).collect();
    ranges.sort();
    let mut pairs = Vec::new();
    for (i, a) in ranges.iter().enumerate() {
        let sa = d.sentence_of(a.first);
        for b in &ranges[i + 1..] {
            if sa.is_some()
                && sa == d.sentence_of(a.last)
                && sa == d.sentence_of(b.first)
                && sa == d.sentence_of(b.last)
            {
                pairs.push((*a, *b));
            }
        }
    }
    pairs
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSampling {
    /// Unrelated pairs farther apart (in gap tokens) than this are dropped; `None` keeps all.
    pub max_distance: Option<usize>,
    pub sample_rate: f64,
    pub seed: u64,
}

impl Default for PairSampling {
    fn default() -> Self {
        PairSampling {
            max_distance: Some(10),
            sample_rate: 0.5,
            seed: 0,
        }
    }
}

impl PairSampling {
    pub fn keep_all(seed: u64) -> Self {
        PairSampling {
            max_distance: None,
            sample_rate: 1.0,
            seed,
        }
    }
}

/// Candidate pairs for relation datasets.
///
/// Pairs with a gold relation are always kept. Unrelated pairs survive the
/// distance filter and then one uniform draw per pair, in text order, from a
/// ChaCha8 stream seeded with `seed`.
pub fn candidate_pairs(doc: &AnnotatedDocument, sampling: &PairSampling) -> Vec<(TokenRange, TokenRange)> {
    let rate = sampling.sample_rate.clamp(0.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
    sentence_pairs(doc)
        .into_iter()
        .filter(|&(a, b)| {
            let related = doc.relations.iter().any(|r| {
                r.label != RelationLabel::NoRelation
                    && ((r.arg1 == a && r.arg2 == b) || (r.arg1 == b && r.arg2 == a))
            });
            if related {
                return true;
            }
            if sampling.max_distance.is_some_and(|max| gap_tokens(a, b) >= max) {
                return false;
            }
            rng.random::<f64>() < rate
        })
        .collect()
}

fn instance(doc: &Document, a: TokenRange, b: TokenRange, c: Classification) -> RelationInstance {
    let (arg1, arg2) = if c.reversed { (b, a) } else { (a, b) };
    let sentence_index = doc.sentence_of(a.first).expect("pair lies in a sentence");
    RelationInstance {
        arg1,
        arg2,
        label: c.label,
        sentence_index,
    }
}

/// Classify the given pairs, keeping NO-RELATION outcomes when asked.
pub fn classify_pairs(
    doc: &AnnotatedDocument,
    pairs: &[(TokenRange, TokenRange)],
    patterns: &PatternSet,
    keep_no_relation: bool,
) -> Vec<RelationInstance> {
    pairs
        .iter()
        .map(|&(a, b)| (a, b, classify_oriented(&doc.document, a, b, patterns)))
        .filter(|(_, _, c)| keep_no_relation || c.label != RelationLabel::NoRelation)
        .map(|(a, b, c)| instance(&doc.document, a, b, c))
        .collect()
}

/// Every positive relation between same-sentence terms.
pub fn extract_all(doc: &AnnotatedDocument, patterns: &PatternSet) -> Vec<RelationInstance> {
    classify_pairs(doc, &sentence_pairs(doc), patterns, false)
}
