//! Precision/recall/F1 for terms and relations, and candidate-aware
//! accuracy metrics for entity linking.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{bio_sequence, AnnotatedDocument, BioLabel, TokenRange};
use crate::linker::LinkAnnotation;
use crate::relation::RelationLabel;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("gold has {gold} documents, predictions have {pred}")]
    DocumentCount { gold: usize, pred: usize },
    #[error("document {index}: gold id {gold:?} does not match predicted id {pred:?}")]
    DocumentId { index: usize, gold: String, pred: String },
    #[error("document {id}: gold has {gold} tokens, predictions have {pred}")]
    TokenCount { id: String, gold: usize, pred: usize },
    #[error("document {id}: predicted link at {range} has no candidate list")]
    MissingCandidates { id: String, range: TokenRange },
    #[error("document {id}: predicted qid {qid} at {range} is not among its candidates")]
    PredictionOutsideCandidates { id: String, range: TokenRange, qid: String },
}

/// `num / den`, with 0/0 taken as 0.
pub fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    ratio(2.0 * precision * recall, precision + recall)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl Prf {
    pub fn from_counts(true_positives: usize, predicted: usize, gold: usize) -> Prf {
        let precision = ratio(true_positives as f64, predicted as f64);
        let recall = ratio(true_positives as f64, gold as f64);
        Prf {
            precision,
            recall,
            f1: f1_score(precision, recall),
            true_positives,
            predicted,
            gold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub predicted: usize,
    pub gold: usize,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub per_label: BTreeMap<String, Prf>,
}

impl MetricsReport {
    fn from_prf(p: Prf) -> Self {
        MetricsReport {
            precision: p.precision,
            recall: p.recall,
            f1: p.f1,
            true_positives: p.true_positives,
            predicted: p.predicted,
            gold: p.gold,
            per_label: BTreeMap::new(),
        }
    }
}

fn check_alignment(gold: &[AnnotatedDocument], pred: &[AnnotatedDocument]) -> Result<(), EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::DocumentCount {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    for (index, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.document.id != p.document.id {
            return Err(EvalError::DocumentId {
                index,
                gold: g.document.id.clone(),
                pred: p.document.id.clone(),
            });
        }
        if g.document.len() != p.document.len() {
            return Err(EvalError::TokenCount {
                id: g.document.id.clone(),
                gold: g.document.len(),
                pred: p.document.len(),
            });
        }
    }
    Ok(())
}

/// Span-level scoring: a predicted term counts only when its range equals a gold range.
/// Only top-level terms are scored.
pub fn term_metrics_exact(gold: &[AnnotatedDocument], pred: &[AnnotatedDocument]) -> Result<MetricsReport, EvalError> {
    check_alignment(gold, pred)?;
    let (mut tp, mut n_pred, mut n_gold) = (0, 0, 0);
    for (g, p) in gold.iter().zip(pred) {
        let g_set: HashSet<TokenRange> = g.terms.iter().map(|t| t.range).collect();
        let p_set: HashSet<TokenRange> = p.terms.iter().map(|t| t.range).collect();
        tp += p_set.intersection(&g_set).count();
        n_pred += p_set.len();
        n_gold += g_set.len();
    }
    Ok(MetricsReport::from_prf(Prf::from_counts(tp, n_pred, n_gold)))
}

/// Token-level binary scoring: every token tagged B-TERM or I-TERM is "in term".
pub fn term_metrics_partial(
    gold: &[AnnotatedDocument],
    pred: &[AnnotatedDocument],
) -> Result<MetricsReport, EvalError> {
    check_alignment(gold, pred)?;
    let (mut tp, mut n_pred, mut n_gold) = (0, 0, 0);
    for (g, p) in gold.iter().zip(pred) {
        let len = g.document.len();
        let gs = bio_sequence(len, &g.terms);
        let ps = bio_sequence(len, &p.terms);
        for (a, b) in gs.iter().zip(&ps) {
            let gi = *a != BioLabel::Outside;
            let pi = *b != BioLabel::Outside;
            tp += usize::from(gi && pi);
            n_gold += usize::from(gi);
            n_pred += usize::from(pi);
        }
    }
    Ok(MetricsReport::from_prf(Prf::from_counts(tp, n_pred, n_gold)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Averaging {
    /// Mean of per-label precision and recall; F1 is their harmonic mean.
    #[default]
    Macro,
    /// Pooled counts across the evaluated labels.
    Micro,
}

/// Per-label and overall scores for relation instances.
///
/// An instance matches when both argument ranges and the label agree.
/// `labels` restricts scoring to those labels; by default every label seen
/// in gold or predictions is evaluated.
pub fn relation_metrics(
    gold: &[AnnotatedDocument],
    pred: &[AnnotatedDocument],
    labels: Option<&[RelationLabel]>,
    averaging: Averaging,
) -> Result<MetricsReport, EvalError> {
    check_alignment(gold, pred)?;
    let mut counts: BTreeMap<RelationLabel, (usize, usize, usize)> = BTreeMap::new();
    if let Some(ls) = labels {
        for l in ls {
            counts.entry(*l).or_default();
        }
    }
    let keep = |l: RelationLabel| labels.is_none_or(|ls| ls.contains(&l));
    for (g, p) in gold.iter().zip(pred) {
        let g_set: HashSet<(TokenRange, TokenRange, RelationLabel)> = g
            .relations
            .iter()
            .filter(|r| keep(r.label))
            .map(|r| (r.arg1, r.arg2, r.label))
            .collect();
        let p_set: HashSet<(TokenRange, TokenRange, RelationLabel)> = p
            .relations
            .iter()
            .filter(|r| keep(r.label))
            .map(|r| (r.arg1, r.arg2, r.label))
            .collect();
        for x in &p_set {
            let c = counts.entry(x.2).or_default();
            c.1 += 1;
            if g_set.contains(x) {
                c.0 += 1;
            }
        }
        for x in &g_set {
            counts.entry(x.2).or_default().2 += 1;
        }
    }

    let per_label: BTreeMap<String, Prf> = counts
        .iter()
        .map(|(l, &(tp, np, ng))| (l.to_string(), Prf::from_counts(tp, np, ng)))
        .collect();
    let overall = match averaging {
        Averaging::Micro => {
            let (tp, np, ng) = counts
                .values()
                .fold((0, 0, 0), |a, c| (a.0 + c.0, a.1 + c.1, a.2 + c.2));
            Prf::from_counts(tp, np, ng)
        }
        Averaging::Macro => {
            let n = per_label.len() as f64;
            let precision = ratio(per_label.values().map(|p| p.precision).sum(), n);
            let recall = ratio(per_label.values().map(|p| p.recall).sum(), n);
            Prf {
                precision,
                recall,
                f1: f1_score(precision, recall),
                true_positives: per_label.values().map(|p| p.true_positives).sum(),
                predicted: per_label.values().map(|p| p.predicted).sum(),
                gold: per_label.values().map(|p| p.gold).sum(),
            }
        }
    };
    Ok(MetricsReport {
        per_label,
        ..MetricsReport::from_prf(overall)
    })
}

/// One scored term for linking evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkItem {
    pub gold: Option<String>,
    pub pred: Option<String>,
    pub candidates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkingReport {
    pub accuracy: f64,
    pub linked_accuracy: f64,
    pub averaged_candidates: f64,
    pub linked_averaged_candidates: f64,
    pub top_k_accuracy: f64,
    pub n_all_entities: usize,
    pub n_all_linked_entities: usize,
    pub n_correct_entities: usize,
    pub n_correct_linked_entities: usize,
    pub num_correct_sets: usize,
}

/// Linking metrics over aligned (gold, prediction, candidate set) triples.
///
/// A missing prediction is correct exactly when the gold link is missing too.
/// The linked variants and top-k accuracy only look at items with a gold link.
pub fn linking_metrics(items: &[LinkItem]) -> LinkingReport {
    let n_all = items.len();
    let linked: Vec<&LinkItem> = items.iter().filter(|i| i.gold.is_some()).collect();
    let n_linked = linked.len();
    let n_correct = items.iter().filter(|i| i.gold == i.pred).count();
    let n_correct_linked = linked.iter().filter(|i| i.gold == i.pred).count();
    let cand_sum: usize = items.iter().map(|i| i.candidates.len()).sum();
    let linked_cand_sum: usize = linked.iter().map(|i| i.candidates.len()).sum();
    let correct_sets = linked
        .iter()
        .filter(|i| i.gold.as_ref().is_some_and(|g| i.candidates.contains(g)))
        .count();
    LinkingReport {
        accuracy: ratio(n_correct as f64, n_all as f64),
        linked_accuracy: ratio(n_correct_linked as f64, n_linked as f64),
        averaged_candidates: ratio(cand_sum as f64, n_all as f64),
        linked_averaged_candidates: ratio(linked_cand_sum as f64, n_linked as f64),
        top_k_accuracy: ratio(correct_sets as f64, n_linked as f64),
        n_all_entities: n_all,
        n_all_linked_entities: n_linked,
        n_correct_entities: n_correct,
        n_correct_linked_entities: n_correct_linked,
        num_correct_sets: correct_sets,
    }
}

/// Pair each gold link with the predicted link on the same range.
///
/// Gold links define the evaluated terms. A term with no predicted link is
/// scored as a missing prediction with an empty candidate set. Predicted links
/// must carry their candidate list and predict from within it.
pub fn align_links(gold: &[AnnotatedDocument], pred: &[AnnotatedDocument]) -> Result<Vec<LinkItem>, EvalError> {
    check_alignment(gold, pred)?;
    let mut items = Vec::new();
    for (g, p) in gold.iter().zip(pred) {
        let by_range: HashMap<TokenRange, &LinkAnnotation> = p.links.iter().map(|l| (l.range, l)).collect();
        for gl in &g.links {
            let item = match by_range.get(&gl.range) {
                None => LinkItem {
                    gold: gl.qid.clone(),
                    pred: None,
                    candidates: Vec::new(),
                },
                Some(pl) => {
                    let candidates = pl.candidates.clone().ok_or_else(|| EvalError::MissingCandidates {
                        id: p.document.id.clone(),
                        range: pl.range,
                    })?;
                    if let Some(q) = &pl.qid {
                        if !candidates.contains(q) {
                            return Err(EvalError::PredictionOutsideCandidates {
                                id: p.document.id.clone(),
                                range: pl.range,
                                qid: q.clone(),
                            });
                        }
                    }
                    LinkItem {
                        gold: gl.qid.clone(),
                        pred: pl.qid.clone(),
                        candidates,
                    }
                }
            };
            items.push(item);
        }
    }
    Ok(items)
}

pub fn linking_metrics_docs(gold: &[AnnotatedDocument], pred: &[AnnotatedDocument]) -> Result<LinkingReport, EvalError> {
    Ok(linking_metrics(&align_links(gold, pred)?))
}
