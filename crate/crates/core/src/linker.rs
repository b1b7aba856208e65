//! Two-stage entity linking: candidate generation over a mention and its
//! sub-n-grams, then ranking by weighted cosine similarity or by how richly
//! the entity is connected in the knowledge base.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AnnotatedDocument, Analyzer, Document, TokenRange};
use crate::kb::{cosine, qid_order_key, EmbeddingStore, EntityRecord, KbStore};

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("weighted_cosine linking needs an embedding store")]
    MissingEmbeddings,
    #[error("unknown linking mode {0:?} (expected weighted_cosine or baseline)")]
    UnknownMode(String),
    #[error("threshold {0} outside [-1, 1]")]
    BadThreshold(f64),
    #[error("document {doc}: term {range} is out of bounds")]
    BadRange { doc: String, range: TokenRange },
}

/// Link result for one term; `qid: None` means no entity was chosen.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkAnnotation {
    pub range: TokenRange,
    pub qid: Option<String>,
    /// Ranked candidate qids, kept so candidate-set metrics can be computed later.
    pub candidates: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy)]
pub struct Mention<'a> {
    pub document: &'a Document,
    pub range: TokenRange,
    /// Tokens taken on each side of the mention for its context vector.
    pub context_window: usize,
}

impl<'a> Mention<'a> {
    pub fn new(document: &'a Document, range: TokenRange, context_window: usize) -> Self {
        Mention {
            document,
            range,
            context_window,
        }
    }

    pub fn norms(&self) -> Vec<&'a str> {
        self.document.norms(self.range).collect()
    }

    /// Mention tokens plus the context window, clipped at the document edges.
    pub fn context_norms(&self) -> Vec<&'a str> {
        let first = self.range.first.saturating_sub(self.context_window);
        let last = (self.range.last + self.context_window).min(self.document.len() - 1);
        self.document.norms(TokenRange::new(first, last)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub entity: EntityRecord,
    /// Normalized sub-n-gram of the mention that hit the entity's name or a synonym.
    pub matched_via: String,
    pub n_matching: usize,
    pub n_all: usize,
    /// Cosine similarity; `None` until ranked, or when a vector is missing.
    pub raw_similarity: Option<f64>,
    pub weight: f64,
    pub score: f64,
    pub below_threshold: bool,
}

impl Candidate {
    pub fn qid(&self) -> &str {
        &self.entity.qid
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub range: TokenRange,
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn top(&self) -> Option<&Candidate> {
        self.candidates.first()
    }

    pub fn qids(&self) -> Vec<String> {
        self.candidates.iter().map(|c| c.entity.qid.clone()).collect()
    }
}

/// Look up the full mention and (unless `full_only`) every contiguous
/// n-gram of length `1..=max_ngram`. Each entity appears once, under its
/// longest matching n-gram (leftmost on ties); disambiguation pages are
/// dropped. Output is in ascending qid order.
pub fn generate_candidates(mention: &Mention<'_>, kb: &KbStore, max_ngram: usize, full_only: bool) -> CandidateSet {
    let norms = mention.norms();
    let n_all = norms.len();
    let mut grams: Vec<(usize, usize)> = vec![(0, n_all)];
    if !full_only {
        for n in (1..=max_ngram.min(n_all)).rev() {
            for start in 0..=n_all - n {
                if n < n_all {
                    grams.push((start, n));
                }
            }
        }
    }

    let mut best: BTreeMap<&str, Candidate> = BTreeMap::new();
    for (start, n) in grams {
        let key = norms[start..start + n].join(" ");
        for entity in kb.lookup_exact(&key) {
            if entity.is_disambiguation {
                continue;
            }
            let better = best.get(entity.qid.as_str()).is_none_or(|c| n > c.n_matching);
            if better {
                let weight = n as f64 / n_all as f64;
                best.insert(
                    &entity.qid,
                    Candidate {
                        entity: entity.clone(),
                        matched_via: key.clone(),
                        n_matching: n,
                        n_all,
                        raw_similarity: None,
                        weight,
                        score: weight,
                        below_threshold: false,
                    },
                );
            }
        }
    }
    let mut candidates: Vec<Candidate> = best.into_values().collect();
    candidates.sort_by(|a, b| qid_order_key(a.qid()).cmp(&qid_order_key(b.qid())));
    CandidateSet {
        range: mention.range,
        candidates,
    }
}

/// Normalized tokens of the entity's name, description and synonyms.
pub fn entity_norms(entity: &EntityRecord, analyzer: &Analyzer) -> Vec<String> {
    let mut norms = analyzer.phrase_norms(&entity.name);
    norms.extend(analyzer.phrase_norms(&entity.description));
    for s in &entity.synonyms {
        norms.extend(analyzer.phrase_norms(s));
    }
    norms
}

fn by_score_then_qid(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| qid_order_key(a.qid()).cmp(&qid_order_key(b.qid())))
}

/// Score each candidate by cosine(mention+context, entity) × weight.
///
/// Candidates without a usable vector on either side score 0 and sort after
/// every scored candidate. Candidates scoring below `threshold` are flagged.
pub fn rank_weighted_cosine(
    set: CandidateSet,
    mention: &Mention<'_>,
    embeddings: &EmbeddingStore,
    analyzer: &Analyzer,
    threshold: f64,
) -> CandidateSet {
    let mention_vec = embeddings.embed_phrase(&mention.context_norms());
    let mut candidates = set.candidates;
    for c in &mut candidates {
        let entity_vec = embeddings.embed_phrase(&entity_norms(&c.entity, analyzer));
        c.raw_similarity = match (&mention_vec, &entity_vec) {
            (Some(m), Some(e)) => cosine(m, e),
            _ => None,
        };
        c.score = c.raw_similarity.map_or(0.0, |s| s * c.weight);
        c.below_threshold = c.score < threshold;
    }
    candidates.sort_by(|a, b| {
        b.raw_similarity
            .is_some()
            .cmp(&a.raw_similarity.is_some())
            .then_with(|| by_score_then_qid(a, b))
    });
    CandidateSet {
        range: set.range,
        candidates,
    }
}

/// Score each candidate by `num_links + num_relations`.
pub fn rank_baseline(set: CandidateSet) -> CandidateSet {
    let mut candidates = set.candidates;
    for c in &mut candidates {
        c.score = (c.entity.num_links + c.entity.num_relations) as f64;
        c.below_threshold = false;
    }
    candidates.sort_by(by_score_then_qid);
    CandidateSet {
        range: set.range,
        candidates,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkMode {
    #[default]
    WeightedCosine,
    Baseline,
}

impl fmt::Display for LinkMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LinkMode::WeightedCosine => "weighted_cosine",
            LinkMode::Baseline => "baseline",
        })
    }
}

impl FromStr for LinkMode {
    type Err = LinkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "weighted_cosine" => Ok(LinkMode::WeightedCosine),
            "baseline" => Ok(LinkMode::Baseline),
            other => Err(LinkError::UnknownMode(other.to_string())),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinkerConfig {
    pub mode: LinkMode,
    pub threshold: f64,
    pub context_window: usize,
    pub max_ngram: usize,
}

impl Default for LinkerConfig {
    fn default() -> Self {
        LinkerConfig {
            mode: LinkMode::WeightedCosine,
            threshold: 0.0,
            context_window: 5,
            max_ngram: 3,
        }
    }
}

impl LinkerConfig {
    pub fn validate(&self) -> Result<(), LinkError> {
        if !(-1.0..=1.0).contains(&self.threshold) {
            return Err(LinkError::BadThreshold(self.threshold));
        }
        Ok(())
    }
}

/// Generate and rank candidates for one mention according to `config.mode`.
pub fn candidates_for(
    mention: &Mention<'_>,
    kb: &KbStore,
    embeddings: Option<&EmbeddingStore>,
    analyzer: &Analyzer,
    config: &LinkerConfig,
) -> Result<CandidateSet, LinkError> {
    match config.mode {
        LinkMode::Baseline => Ok(rank_baseline(generate_candidates(mention, kb, config.max_ngram, true))),
        LinkMode::WeightedCosine => {
            let emb = embeddings.ok_or(LinkError::MissingEmbeddings)?;
            let set = generate_candidates(mention, kb, config.max_ngram, false);
            Ok(rank_weighted_cosine(set, mention, emb, analyzer, config.threshold))
        }
    }
}

/// Link every term of `doc`.
pub fn link(
    doc: &AnnotatedDocument,
    kb: &KbStore,
    embeddings: Option<&EmbeddingStore>,
    analyzer: &Analyzer,
    config: &LinkerConfig,
) -> Result<Vec<LinkAnnotation>, LinkError> {
    config.validate()?;
    doc.terms
        .iter()
        .map(|term| {
            if term.range.last >= doc.document.len() {
                return Err(LinkError::BadRange {
                    doc: doc.document.id.clone(),
                    range: term.range,
                });
            }
            let mention = Mention::new(&doc.document, term.range, config.context_window);
            let set = candidates_for(&mention, kb, embeddings, analyzer, config)?;
            let qid = set
                .top()
                .filter(|c| !c.below_threshold)
                .map(|c| c.entity.qid.clone());
            Ok(LinkAnnotation {
                range: term.range,
                qid,
                candidates: Some(set.qids()),
            })
        })
        .collect()
}

/// Link a whole corpus in parallel; output order follows input order.
pub fn link_corpus(
    corpus: &[AnnotatedDocument],
    kb: &KbStore,
    embeddings: Option<&EmbeddingStore>,
    analyzer: &Analyzer,
    config: &LinkerConfig,
) -> Result<Vec<AnnotatedDocument>, LinkError> {
    corpus
        .par_iter()
        .map(|doc| {
            let mut out = doc.clone();
            out.links = link(doc, kb, embeddings, analyzer, config)?;
            Ok(out)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{TermAnnotation, TermSource};
    use crate::kb::{load_embeddings_from, KbOptions};

    fn entity(qid: &str, name: &str, synonyms: &[&str], links: u64, relations: u64) -> EntityRecord {
        EntityRecord {
            qid: qid.into(),
            name: name.into(),
            synonyms: synonyms.iter().map(|s| s.to_string()).collect(),
            description: String::new(),
            is_disambiguation: false,
            num_links: links,
            num_relations: relations,
        }
    }

    fn kb(records: Vec<EntityRecord>) -> KbStore {
        KbStore::from_records(records, &Analyzer::default(), &KbOptions::default())
    }

    fn mention_doc(text: &str) -> Document {
        Analyzer::default().tokenize("m", text)
    }

    #[test]
    fn partial_match_weight() {
        let store = kb(vec![entity("Q1", "опорный вектор", &[], 0, 0)]);
        let doc = mention_doc("метод опорных векторов");
        let m = Mention::new(&doc, TokenRange::new(0, 2), 5);
        let set = generate_candidates(&m, &store, 3, false);
        assert_eq!(set.candidates.len(), 1);
        let c = &set.candidates[0];
        assert_eq!((c.n_matching, c.n_all), (2, 3));
        assert_eq!(c.weight, 2.0 / 3.0);
        assert_eq!(c.matched_via, "опорн вектор");
    }

    #[test]
    fn full_match_and_longest_wins() {
        let store = kb(vec![
            entity("Q1", "метод опорных векторов", &["вектор"], 0, 0),
            entity("Q2", "вектор", &[], 0, 0),
        ]);
        let doc = mention_doc("метод опорных векторов");
        let m = Mention::new(&doc, TokenRange::new(0, 2), 5);
        let set = generate_candidates(&m, &store, 3, false);
        assert_eq!(set.qids(), ["Q1", "Q2"]);
        assert_eq!(set.candidates[0].weight, 1.0);
        assert_eq!(set.candidates[1].n_matching, 1);
        let full = generate_candidates(&m, &store, 3, true);
        assert_eq!(full.qids(), ["Q1"]);
    }

    #[test]
    fn disambiguation_pages_removed() {
        let mut page = entity("Q5", "сеть", &[], 9, 9);
        page.is_disambiguation = true;
        let store = kb(vec![page]);
        let doc = mention_doc("сеть");
        let set = generate_candidates(&Mention::new(&doc, TokenRange::single(0), 5), &store, 3, false);
        assert!(set.candidates.is_empty());
    }

    #[test]
    fn baseline_ranking() {
        let store = kb(vec![
            entity("Q9", "сеть", &[], 2, 5),
            entity("Q7", "сеть", &[], 3, 5),
            entity("Q8", "сеть", &[], 2, 5),
        ]);
        let doc = mention_doc("сеть");
        let m = Mention::new(&doc, TokenRange::single(0), 5);
        let ranked = rank_baseline(generate_candidates(&m, &store, 3, true));
        assert_eq!(ranked.qids(), ["Q7", "Q8", "Q9"]);
        assert_eq!(ranked.candidates[0].score, 8.0);
    }

    fn emb(text: &str) -> EmbeddingStore {
        load_embeddings_from(text.as_bytes(), &Analyzer::default()).unwrap()
    }

    #[test]
    fn cosine_ranking_by_hand() {
        // mention context = "альфа бета" -> mean (0.5, 0.5)
        let store = kb(vec![
            entity("Q1", "альфа бета", &[], 0, 0),
            entity("Q2", "альфа", &[], 0, 0),
            entity("Q3", "бета", &[], 0, 0),
        ]);
        let vectors = emb("2 2\nальфа 1 0\nбета 0 1\n");
        let doc = mention_doc("альфа бета");
        let m = Mention::new(&doc, TokenRange::new(0, 1), 5);
        let a = Analyzer::default();
        let ranked = rank_weighted_cosine(generate_candidates(&m, &store, 3, false), &m, &vectors, &a, 0.0);
        assert_eq!(ranked.qids(), ["Q1", "Q2", "Q3"]);
        assert!((ranked.candidates[0].score - 1.0).abs() < 1e-12);
        let half_cos = std::f64::consts::FRAC_1_SQRT_2 * 0.5;
        assert!((ranked.candidates[1].score - half_cos).abs() < 1e-12);
        assert!((ranked.candidates[2].score - half_cos).abs() < 1e-12);
    }

    #[test]
    fn absent_vectors_sort_last_and_orthogonal_scores_zero() {
        let store = kb(vec![
            entity("Q1", "альфа", &[], 0, 0),
            entity("Q2", "альфа", &["гамма"], 0, 0),
            entity("Q3", "альфа", &["неизвестно"], 0, 0),
        ]);
        let vectors = emb("2 2\nальфа 1 0\nгамма -1 0\n");
        let doc = mention_doc("альфа");
        let m = Mention::new(&doc, TokenRange::single(0), 0);
        let ranked = rank_weighted_cosine(
            generate_candidates(&m, &store, 3, false),
            &m,
            &vectors,
            &Analyzer::default(),
            0.0,
        );
        // Q2's vector is (0, 0) -> no cosine
        assert_eq!(ranked.qids(), ["Q1", "Q3", "Q2"]);
        assert_eq!(ranked.candidates[2].raw_similarity, None);
        assert_eq!(ranked.candidates[2].score, 0.0);

        let ortho = emb("2 2\nальфа 1 0\nбета 0 1\n");
        let store = kb(vec![entity("Q1", "альфа", &["бета"], 0, 0)]);
        let doc = mention_doc("альфа");
        let m = Mention::new(&doc, TokenRange::single(0), 0);
        let mut set = generate_candidates(&m, &store, 3, false);
        set.candidates[0].entity.name = "бета".into();
        set.candidates[0].entity.synonyms.clear();
        let ranked = rank_weighted_cosine(set, &m, &ortho, &Analyzer::default(), 0.0);
        assert_eq!(ranked.candidates[0].score, 0.0);
    }

    #[test]
    fn context_window_clips() {
        let doc = mention_doc("a b c d e f g");
        assert_eq!(Mention::new(&doc, TokenRange::single(1), 2).context_norms(), ["a", "b", "c", "d"]);
        assert_eq!(Mention::new(&doc, TokenRange::single(5), 5).context_norms().len(), 7);
        assert_eq!(Mention::new(&doc, TokenRange::single(3), 0).context_norms(), ["d"]);
    }

    #[test]
    fn link_emits_none_and_respects_threshold() {
        let store = kb(vec![entity("Q1", "альфа", &[], 0, 0)]);
        let vectors = emb("2 2\nальфа 1 0\nбета -1 0\n");
        let doc = mention_doc("альфа бета бета бета бета");
        let annotated = AnnotatedDocument::with_terms(
            doc,
            vec![
                TermAnnotation::new(TokenRange::single(0), TermSource::Gold),
                TermAnnotation::new(TokenRange::single(2), TermSource::Gold),
            ],
        );
        let a = Analyzer::default();
        let config = LinkerConfig {
            context_window: 5,
            ..LinkerConfig::default()
        };
        let links = link(&annotated, &store, Some(&vectors), &a, &config).unwrap();
        // context mean is (-0.6, 0) -> negative similarity, below the 0.0 threshold
        assert_eq!(links[0].qid, None);
        assert_eq!(links[0].candidates.as_deref(), Some(&["Q1".to_string()][..]));
        assert_eq!(links[1].qid, None);
        assert_eq!(links[1].candidates.as_deref(), Some(&[][..]));

        let open = LinkerConfig {
            threshold: -1.0,
            ..config.clone()
        };
        let links = link(&annotated, &store, Some(&vectors), &a, &open).unwrap();
        assert_eq!(links[0].qid.as_deref(), Some("Q1"));

        assert!(matches!(
            link(&annotated, &store, None, &a, &config),
            Err(LinkError::MissingEmbeddings)
        ));
        let bad = LinkerConfig {
            threshold: 2.0,
            ..config
        };
        assert!(link(&annotated, &store, Some(&vectors), &a, &bad).is_err());
    }
}
