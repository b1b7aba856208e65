//! Dictionary-based BIO term tagging, boundary repair, annotation merging,
//! and the weak-supervision loop that alternates tagging with training.

use std::cmp::Reverse;
use std::collections::HashSet;
use std::io::Write;
use std::process::{Command, Stdio};
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{
    read_annotations_from, write_annotations_to, AnnotatedDocument, Analyzer, Document,
    TermAnnotation, TermSource, TokenRange,
};
use crate::dictionary::TermDictionary;

/// Russian prepositions stripped from the start of a term.
pub const DEFAULT_PREPOSITIONS: &[&str] = &[
    "в", "на", "с", "по", "для", "из", "к", "о", "об", "от", "при", "у", "за", "под", "над", "без",
    "до", "через",
];

#[derive(Debug, Error)]
pub enum TaggerError {
    #[error("tagger failed: {0}")]
    Failed(String),
    #[error("weak supervision aborted at iteration {iteration}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<TaggerError>,
    },
    #[error("external tagger `{command}` failed")]
    Command {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown merge policy {0:?}")]
    UnknownPolicy(String),
}

/// A term tagger that can optionally be retrained on annotated data.
pub trait Tagger: Send + Sync {
    /// Non-overlapping terms for one document.
    fn tag(&self, doc: &Document) -> Result<Vec<TermAnnotation>, TaggerError>;

    /// Training hook; the default does nothing.
    fn train(&mut self, _corpus: &[AnnotatedDocument]) -> Result<(), TaggerError> {
        Ok(())
    }
}

/// Greedy longest-match over normalized tokens, sentence by sentence.
pub fn dictionary_tag(doc: &Document, dict: &TermDictionary) -> Vec<TermAnnotation> {
    let mut out = Vec::new();
    let longest = dict.longest_entry();
    if longest == 0 {
        return out;
    }
    for sentence in &doc.sentences {
        let mut i = sentence.first;
        while i <= sentence.last {
            let max_len = longest.min(sentence.last - i + 1);
            let hit = (1..=max_len)
                .rev()
                .find(|&len| dict.contains(&doc.norm_key(TokenRange::new(i, i + len - 1))));
            match hit {
                Some(len) => {
                    out.push(TermAnnotation::new(
                        TokenRange::new(i, i + len - 1),
                        TermSource::Dictionary,
                    ));
                    i += len;
                }
                None => i += 1,
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct DictionaryTagger {
    pub dictionary: TermDictionary,
}

impl Tagger for DictionaryTagger {
    fn tag(&self, doc: &Document) -> Result<Vec<TermAnnotation>, TaggerError> {
        Ok(dictionary_tag(doc, &self.dictionary))
    }
}

#[derive(Debug, Clone)]
pub struct RepairConfig {
    pub prepositions: HashSet<String>,
}

impl Default for RepairConfig {
    fn default() -> Self {
        RepairConfig {
            prepositions: DEFAULT_PREPOSITIONS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl RepairConfig {
    /// Built-in prepositions plus `extra` (lowercased).
    pub fn with_extra<I: IntoIterator<Item = S>, S: AsRef<str>>(extra: I) -> Self {
        let mut config = RepairConfig::default();
        config
            .prepositions
            .extend(extra.into_iter().map(|s| s.as_ref().to_lowercase()));
        config
    }
}

fn has_non_latin_letter(surface: &str) -> bool {
    surface.chars().any(|c| c.is_alphabetic()) && !crate::corpus::is_latin_script(surface)
}

/// Boundary fixes for tagged terms, applied to all terms in this order:
///
/// 1. leading prepositions are removed (a term made only of them is dropped);
/// 2. a term whose last token is a non-Latin word absorbs the following
///    Latin-script token, or a parenthesized `( WORD )` group, provided it is
///    in the same sentence and not already part of another term.
///
/// The function is idempotent.
pub fn repair_boundaries(
    doc: &Document,
    anns: &[TermAnnotation],
    config: &RepairConfig,
) -> Vec<TermAnnotation> {
    let mut terms: Vec<TermAnnotation> = anns
        .iter()
        .filter_map(|t| {
            let mut first = t.range.first;
            while first <= t.range.last
                && config
                    .prepositions
                    .contains(&doc.tokens[first].surface.to_lowercase())
            {
                first += 1;
            }
            (first <= t.range.last)
                .then(|| TermAnnotation::new(TokenRange::new(first, t.range.last), t.source))
        })
        .collect();
    terms.sort_by_key(|t| t.range);

    let covered: HashSet<usize> = terms.iter().flat_map(|t| t.range.indices()).collect();
    let n = doc.tokens.len();
    for t in &mut terms {
        let last = t.range.last;
        if !has_non_latin_letter(&doc.tokens[last].surface) {
            continue;
        }
        let sentence = doc.sentence_of(last);
        let free = |i: usize| i < n && !covered.contains(&i) && doc.sentence_of(i) == sentence;
        let latin = |i: usize| free(i) && doc.tokens[i].is_latin_script;
        if latin(last + 1) {
            t.range.last = last + 1;
        } else if free(last + 1)
            && doc.tokens[last + 1].surface == "("
            && latin(last + 2)
            && free(last + 3)
            && doc.tokens[last + 3].surface == ")"
        {
            t.range.last = last + 3;
        }
    }
    terms
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MergePolicy {
    /// Longer span wins a conflict; equal lengths go to the first list.
    #[default]
    UnionPreferLonger,
    /// The first list (dictionary side) wins every conflict.
    DictionaryPriority,
    /// The second list (model side) wins every conflict.
    ModelPriority,
}

impl FromStr for MergePolicy {
    type Err = TaggerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "union_prefer_longer" => Ok(MergePolicy::UnionPreferLonger),
            "dictionary_priority" => Ok(MergePolicy::DictionaryPriority),
            "model_priority" => Ok(MergePolicy::ModelPriority),
            _ => Err(TaggerError::UnknownPolicy(s.to_string())),
        }
    }
}

/// Union of two annotation lists over the same document, with overlapping
/// spans resolved by `policy`. `a` is the dictionary side, `b` the model side.
///
/// Spans present in both lists are kept once, as they appear in `a`. A span
/// that wins a conflict against a different span is marked `Merged`.
pub fn merge_annotations(
    a: &[TermAnnotation],
    b: &[TermAnnotation],
    policy: MergePolicy,
) -> Vec<TermAnnotation> {
    // (annotation, side) with side 0 = a, 1 = b
    let mut pool: Vec<(TermAnnotation, u8)> = a.iter().map(|t| (*t, 0)).collect();
    let in_a: HashSet<TokenRange> = a.iter().map(|t| t.range).collect();
    pool.extend(b.iter().filter(|t| !in_a.contains(&t.range)).map(|t| (*t, 1)));

    let mut order = pool.clone();
    order.sort_by_key(|&(t, side)| match policy {
        MergePolicy::UnionPreferLonger => (Reverse(t.range.len()), side, t.range),
        MergePolicy::DictionaryPriority => (Reverse(0), side, t.range),
        MergePolicy::ModelPriority => (Reverse(0), 1 - side, t.range),
    });

    let mut kept: Vec<TermAnnotation> = Vec::new();
    for (t, _) in order {
        if kept.iter().all(|k| !k.range.overlaps(&t.range)) {
            kept.push(t);
        }
    }
    for k in &mut kept {
        if pool.iter().any(|(p, _)| p.range != k.range && p.range.overlaps(&k.range)) {
            k.source = TermSource::Merged;
        }
    }
    kept.sort_by_key(|t| t.range);
    kept
}

#[derive(Debug, Clone)]
pub struct WeakSupervisionConfig {
    pub iterations: usize,
    pub merge_policy: MergePolicy,
    /// Apply `repair_boundaries` after every tagging pass.
    pub repair: Option<RepairConfig>,
}

impl Default for WeakSupervisionConfig {
    fn default() -> Self {
        WeakSupervisionConfig {
            iterations: 1,
            merge_policy: MergePolicy::default(),
            repair: Some(RepairConfig::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IterationStats {
    /// 0 is the dictionary seed pass.
    pub iteration: usize,
    pub documents: usize,
    pub terms: usize,
    pub added: usize,
    pub removed: usize,
}

#[derive(Debug, Clone)]
pub struct WeakSupervisionOutput {
    pub corpus: Vec<AnnotatedDocument>,
    pub stats: Vec<IterationStats>,
}

fn repaired(doc: &Document, terms: Vec<TermAnnotation>, config: &WeakSupervisionConfig) -> Vec<TermAnnotation> {
    match &config.repair {
        Some(r) => repair_boundaries(doc, &terms, r),
        None => terms,
    }
}

fn diff(prev: &[TermAnnotation], next: &[TermAnnotation]) -> (usize, usize) {
    let p: HashSet<TokenRange> = prev.iter().map(|t| t.range).collect();
    let n: HashSet<TokenRange> = next.iter().map(|t| t.range).collect();
    (n.difference(&p).count(), p.difference(&n).count())
}

fn stats_for(iteration: usize, prev: Option<&[AnnotatedDocument]>, next: &[AnnotatedDocument]) -> IterationStats {
    let (mut added, mut removed) = (0, 0);
    for (i, d) in next.iter().enumerate() {
        let before = prev.map(|p| p[i].terms.as_slice()).unwrap_or(&[]);
        let (a, r) = diff(before, &d.terms);
        added += a;
        removed += r;
    }
    IterationStats {
        iteration,
        documents: next.len(),
        terms: next.iter().map(|d| d.terms.len()).sum(),
        added,
        removed,
    }
}

/// Seed pass: dictionary annotations (repaired when configured) for every document.
pub fn dictionary_seed(
    corpus: &[Document],
    dict: &TermDictionary,
    config: &WeakSupervisionConfig,
) -> Vec<AnnotatedDocument> {
    corpus
        .par_iter()
        .map(|doc| {
            let terms = repaired(doc, dictionary_tag(doc, dict), config);
            AnnotatedDocument::with_terms(doc.clone(), terms)
        })
        .collect()
}

/// One re-annotation pass: merge the previous annotations (dictionary side)
/// with the tagger's output (model side).
pub fn weak_supervision_step(
    previous: &[AnnotatedDocument],
    tagger: &dyn Tagger,
    config: &WeakSupervisionConfig,
) -> Result<Vec<AnnotatedDocument>, TaggerError> {
    previous
        .par_iter()
        .map(|prev| {
            let doc = &prev.document;
            let model = repaired(doc, tagger.tag(doc)?, config);
            let merged = merge_annotations(&prev.terms, &model, config.merge_policy);
            let mut next = prev.clone();
            next.terms = repaired(doc, merged, config);
            Ok(next)
        })
        .collect()
}

/// Dictionary seed, then `iterations` rounds of train → re-annotate, and a
/// final training call on the last corpus.
pub fn run_weak_supervision(
    corpus: &[Document],
    dict: &TermDictionary,
    tagger: &mut dyn Tagger,
    config: &WeakSupervisionConfig,
) -> Result<WeakSupervisionOutput, TaggerError> {
    let wrap = |iteration: usize| move |e: TaggerError| TaggerError::Iteration {
        iteration,
        source: Box::new(e),
    };
    let mut current = dictionary_seed(corpus, dict, config);
    let mut stats = vec![stats_for(0, None, &current)];
    for iteration in 1..=config.iterations.max(1) {
        tagger.train(&current).map_err(wrap(iteration))?;
        let next = weak_supervision_step(&current, tagger, config).map_err(wrap(iteration))?;
        stats.push(stats_for(iteration, Some(&current), &next));
        current = next;
    }
    let last = config.iterations.max(1);
    tagger.train(&current).map_err(wrap(last))?;
    Ok(WeakSupervisionOutput {
        corpus: current,
        stats,
    })
}

/// Tagger backed by an external program.
///
/// Tagging runs `sh -c "<command> tag"` with one JSONL document on stdin and
/// expects the same document back with `terms` filled in. Training runs
/// `sh -c "<command> train"` with the whole annotated corpus on stdin.
#[derive(Debug, Clone)]
pub struct CommandTagger {
    pub command: String,
    pub analyzer: Analyzer,
}

impl CommandTagger {
    fn run(&self, verb: &str, input: &[u8]) -> Result<Vec<u8>, TaggerError> {
        let err = |source| TaggerError::Command {
            command: self.command.clone(),
            source,
        };
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(format!("{} {verb}", self.command))
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(err)?;
        child
            .stdin
            .take()
            .expect("stdin is piped")
            .write_all(input)
            .map_err(err)?;
        let output = child.wait_with_output().map_err(err)?;
        if !output.status.success() {
            return Err(TaggerError::Failed(format!(
                "`{} {verb}` exited with {}",
                self.command, output.status
            )));
        }
        Ok(output.stdout)
    }
}

impl Tagger for CommandTagger {
    fn tag(&self, doc: &Document) -> Result<Vec<TermAnnotation>, TaggerError> {
        let mut input = Vec::new();
        write_annotations_to(&[AnnotatedDocument::new(doc.clone())], &mut input)
            .map_err(|e| TaggerError::Failed(e.to_string()))?;
        let out = self.run("tag", &input)?;
        let docs = read_annotations_from(out.as_slice(), &self.analyzer)
            .map_err(|e| TaggerError::Failed(format!("bad tagger output: {e}")))?;
        match docs.as_slice() {
            [d] if d.document.tokens.len() == doc.tokens.len() => Ok(d
                .terms
                .iter()
                .map(|t| TermAnnotation::new(t.range, TermSource::Model))
                .collect()),
            _ => Err(TaggerError::Failed(
                "tagger must return exactly one document with the input tokens".into(),
            )),
        }
    }

    fn train(&mut self, corpus: &[AnnotatedDocument]) -> Result<(), TaggerError> {
        let mut input = Vec::new();
        write_annotations_to(corpus, &mut input).map_err(|e| TaggerError::Failed(e.to_string()))?;
        self.run("train", &input).map(|_| ())
    }
}
