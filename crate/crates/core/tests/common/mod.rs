//! Fixture loading, random corpus generators and brute-force reference
//! implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::PathBuf;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use termlink::corpus::{read_annotations, AnnotatedDocument, Analyzer, Document, TermAnnotation, TermSource, TokenRange};
use termlink::evaluation::LinkItem;
use termlink::kb::{load_embeddings, load_kb, EmbeddingStore, EntityRecord, KbOptions, KbStore};
use termlink::relation::{RelationInstance, RelationLabel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn sample_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/sample")
}

pub fn sample_corpus(analyzer: &Analyzer) -> Vec<Document> {
    read_annotations(sample_dir().join("corpus.jsonl"), analyzer)
        .unwrap()
        .into_iter()
        .map(|d| d.document)
        .collect()
}

pub fn sample_gold(analyzer: &Analyzer) -> Vec<AnnotatedDocument> {
    read_annotations(sample_dir().join("gold.jsonl"), analyzer).unwrap()
}

pub fn sample_kb(analyzer: &Analyzer) -> KbStore {
    load_kb(sample_dir().join("kb.jsonl"), analyzer, &KbOptions::default()).unwrap()
}

pub fn sample_embeddings(analyzer: &Analyzer) -> EmbeddingStore {
    load_embeddings(sample_dir().join("emb.txt"), analyzer).unwrap()
}

// ---------------------------------------------------------------------------
// random corpora

const WORDS: &[&str] = &[
    "метод", "опорных", "векторов", "сеть", "нейронная", "модель", "обучение", "данных", "анализ", "текста",
    "SVM", "CRF", "BERT", "word2vec", "в", "на", "для", "с", "по", "(", ")", ",", ".", "-",
];
const CAPITALIZED: &[&str] = &["Метод", "Сеть", "Модель", "Обучение", "Анализ"];

/// Whitespace-joined random text of `n` tokens with occasional sentence breaks.
pub fn random_text(rng: &mut impl Rng, n: usize) -> String {
    let mut words: Vec<&str> = Vec::with_capacity(n);
    while words.len() < n {
        if words.last() == Some(&".") && rng.random_bool(0.7) {
            words.push(CAPITALIZED.choose(rng).unwrap());
        } else {
            words.push(WORDS.choose(rng).unwrap());
        }
    }
    words.join(" ")
}

/// Random dictionary entries (as norm sequences) drawn from n-grams of the
/// documents plus a few unrelated ones.
pub fn random_entries(rng: &mut impl Rng, docs: &[Document], count: usize, max_len: usize) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    for _ in 0..count {
        let doc = docs.choose(rng).unwrap();
        if doc.is_empty() {
            continue;
        }
        let len = rng.random_range(1..=max_len);
        let start = rng.random_range(0..doc.len());
        let end = (start + len).min(doc.len());
        out.push(doc.tokens[start..end].iter().map(|t| t.norm.clone()).collect());
    }
    out.push(vec!["несуществующ".to_string()]);
    out
}

/// Non-overlapping random spans over `len` tokens, at most `max` of them.
pub fn random_spans(rng: &mut impl Rng, len: usize, max: usize) -> Vec<TokenRange> {
    let mut spans = Vec::new();
    let mut i = rng.random_range(0..3);
    while i < len && spans.len() < max {
        let width = rng.random_range(1..=3).min(len - i);
        spans.push(TokenRange::new(i, i + width - 1));
        i += width + rng.random_range(0..4);
    }
    spans
}

fn flat_doc(id: &str, len: usize) -> Document {
    Analyzer::default().tokenize(id, vec!["w"; len].join(" "))
}

const LABELS: [RelationLabel; 5] = RelationLabel::ALL;

fn random_relations(
    rng: &mut impl Rng,
    doc: &Document,
    terms: &[TokenRange],
    seed_from: &[RelationInstance],
    budget: usize,
) -> Vec<RelationInstance> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for r in seed_from {
        if out.len() >= budget {
            break;
        }
        if rng.random_bool(0.6) {
            let label = if rng.random_bool(0.25) {
                *LABELS.choose(rng).unwrap()
            } else {
                r.label
            };
            if seen.insert((r.arg1, r.arg2, label)) {
                out.push(RelationInstance::new(doc, r.arg1, r.arg2, label).unwrap());
            }
        }
    }
    if terms.len() >= 2 {
        for _ in 0..rng.random_range(0..=4) {
            if out.len() >= budget {
                break;
            }
            let a = *terms.choose(rng).unwrap();
            let b = *terms.choose(rng).unwrap();
            let label = *LABELS.choose(rng).unwrap();
            if a != b && seen.insert((a, b, label)) {
                out.push(RelationInstance::new(doc, a, b, label).unwrap());
            }
        }
    }
    out
}

/// Aligned gold/predicted corpora: 1-3 single-sentence documents, at most
/// 20 term and 20 relation annotations per side.
pub fn random_gold_pred(rng: &mut impl Rng) -> (Vec<AnnotatedDocument>, Vec<AnnotatedDocument>) {
    let n_docs = rng.random_range(1..=3);
    let mut gold = Vec::new();
    let mut pred = Vec::new();
    let per_doc = 20 / n_docs;
    for d in 0..n_docs {
        let len = rng.random_range(5..=30);
        let doc = flat_doc(&format!("d{d}"), len);
        let g_spans = random_spans(rng, len, per_doc);
        let p_spans: Vec<TokenRange> = if rng.random_bool(0.15) {
            g_spans.clone()
        } else {
            let mut p: Vec<TokenRange> = Vec::new();
            for &s in &g_spans {
                if !rng.random_bool(0.6) {
                    continue;
                }
                if rng.random_bool(0.3) && s.last + 1 < len {
                    p.push(TokenRange::new(s.first, s.last + 1));
                } else {
                    p.push(s);
                }
            }
            for s in random_spans(rng, len, 4) {
                if p.len() < per_doc && p.iter().all(|x| !x.overlaps(&s)) {
                    p.push(s);
                }
            }
            // widening may have created overlaps; keep a consistent subset
            p.sort();
            let mut kept: Vec<TokenRange> = Vec::new();
            for s in p {
                if kept.last().is_none_or(|k: &TokenRange| !k.overlaps(&s)) {
                    kept.push(s);
                }
            }
            kept
        };
        let terms = |spans: &[TokenRange], source| spans.iter().map(|&r| TermAnnotation::new(r, source)).collect();
        let mut g = AnnotatedDocument::with_terms(doc.clone(), terms(&g_spans, TermSource::Gold));
        let mut p = AnnotatedDocument::with_terms(doc.clone(), terms(&p_spans, TermSource::Model));
        g.relations = random_relations(rng, &doc, &g_spans, &[], per_doc);
        p.relations = random_relations(rng, &doc, &g_spans, &g.relations, per_doc);
        gold.push(g);
        pred.push(p);
    }
    (gold, pred)
}

/// Up to 20 linking items whose predictions come from their candidate sets.
pub fn random_link_items(rng: &mut impl Rng) -> Vec<LinkItem> {
    let pool: Vec<String> = (1..=6).map(|i| format!("Q{i}")).collect();
    (0..rng.random_range(0..=20))
        .map(|_| {
            let gold = rng.random_bool(0.7).then(|| pool.choose(rng).unwrap().clone());
            let k = rng.random_range(0..=4);
            let mut candidates: Vec<String> = pool.choose_multiple(rng, k).cloned().collect();
            if let Some(g) = &gold {
                if rng.random_bool(0.3) && !candidates.contains(g) {
                    candidates.insert(0, g.clone());
                }
            }
            let pred = if candidates.is_empty() || rng.random_bool(0.2) {
                None
            } else if rng.random_bool(0.5) {
                Some(candidates[0].clone())
            } else {
                Some(candidates.choose(rng).unwrap().clone())
            };
            LinkItem { gold, pred, candidates }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// brute-force metric oracles

fn div(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn prf(tp: usize, np: usize, ng: usize) -> [f64; 3] {
    let p = div(tp as f64, np as f64);
    let r = div(tp as f64, ng as f64);
    [p, r, f1(p, r)]
}

pub fn oracle_exact(gold: &[AnnotatedDocument], pred: &[AnnotatedDocument]) -> [f64; 3] {
    let (mut tp, mut np, mut ng) = (0, 0, 0);
    for (g, p) in gold.iter().zip(pred) {
        for pt in &p.terms {
            np += 1;
            if g.terms.iter().any(|gt| gt.range.first == pt.range.first && gt.range.last == pt.range.last) {
                tp += 1;
            }
        }
        ng += g.terms.len();
    }
    prf(tp, np, ng)
}

pub fn oracle_partial(gold: &[AnnotatedDocument], pred: &[AnnotatedDocument]) -> [f64; 3] {
    let (mut tp, mut np, mut ng) = (0, 0, 0);
    for (g, p) in gold.iter().zip(pred) {
        for i in 0..g.document.tokens.len() {
            let in_g = g.terms.iter().any(|t| t.range.first <= i && i <= t.range.last);
            let in_p = p.terms.iter().any(|t| t.range.first <= i && i <= t.range.last);
            if in_g && in_p {
                tp += 1;
            }
            if in_g {
                ng += 1;
            }
            if in_p {
                np += 1;
            }
        }
    }
    prf(tp, np, ng)
}

/// Per-label P/R/F1 and the macro (mean P, mean R, harmonic F1) or micro overall row.
pub fn oracle_relations(
    gold: &[AnnotatedDocument],
    pred: &[AnnotatedDocument],
    labels: Option<&[RelationLabel]>,
    micro: bool,
) -> ([f64; 3], BTreeMap<String, [f64; 3]>) {
    let mut evaluated: Vec<RelationLabel> = match labels {
        Some(ls) => ls.to_vec(),
        None => {
            let mut seen = Vec::new();
            for d in gold.iter().chain(pred) {
                for r in &d.relations {
                    if !seen.contains(&r.label) {
                        seen.push(r.label);
                    }
                }
            }
            seen
        }
    };
    evaluated.sort();
    evaluated.dedup();
    let mut per = BTreeMap::new();
    let (mut all_tp, mut all_np, mut all_ng) = (0, 0, 0);
    for label in &evaluated {
        let (mut tp, mut np, mut ng) = (0, 0, 0);
        for (g, p) in gold.iter().zip(pred) {
            for r in p.relations.iter().filter(|r| r.label == *label) {
                np += 1;
                if g.relations.iter().any(|x| x.arg1 == r.arg1 && x.arg2 == r.arg2 && x.label == r.label) {
                    tp += 1;
                }
            }
            ng += g.relations.iter().filter(|r| r.label == *label).count();
        }
        all_tp += tp;
        all_np += np;
        all_ng += ng;
        per.insert(label.to_string(), prf(tp, np, ng));
    }
    let overall = if micro {
        prf(all_tp, all_np, all_ng)
    } else {
        let n = per.len() as f64;
        let p = div(per.values().map(|v| v[0]).sum(), n);
        let r = div(per.values().map(|v| v[1]).sum(), n);
        [p, r, f1(p, r)]
    };
    (overall, per)
}

/// accuracy, linked_accuracy, averaged_candidates, linked_averaged_candidates, top_k_accuracy
pub fn oracle_linking(items: &[LinkItem]) -> [f64; 5] {
    let mut correct = 0.0;
    let mut linked = 0.0;
    let mut correct_linked = 0.0;
    let mut cands = 0.0;
    let mut linked_cands = 0.0;
    let mut sets = 0.0;
    for it in items {
        cands += it.candidates.len() as f64;
        if it.gold == it.pred {
            correct += 1.0;
        }
        if let Some(g) = &it.gold {
            linked += 1.0;
            linked_cands += it.candidates.len() as f64;
            if it.pred.as_ref() == Some(g) {
                correct_linked += 1.0;
            }
            if it.candidates.iter().any(|c| c == g) {
                sets += 1.0;
            }
        }
    }
    let n = items.len() as f64;
    [
        div(correct, n),
        div(correct_linked, linked),
        div(cands, n),
        div(linked_cands, linked),
        div(sets, linked),
    ]
}

// ---------------------------------------------------------------------------
// brute-force tagging oracle

/// Left-to-right greedy longest match inside each sentence.
pub fn oracle_greedy(doc: &Document, entries: &HashSet<Vec<String>>, max_len: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for s in &doc.sentences {
        let mut i = s.first;
        while i <= s.last {
            let mut best = 0;
            for len in 1..=max_len {
                if i + len - 1 > s.last {
                    break;
                }
                let key: Vec<String> = doc.tokens[i..i + len].iter().map(|t| t.norm.clone()).collect();
                if entries.contains(&key) {
                    best = len;
                }
            }
            if best > 0 {
                out.push((i, i + best - 1));
                i += best;
            } else {
                i += 1;
            }
        }
    }
    out
}

/// Every in-sentence occurrence of a dictionary entry.
pub fn all_occurrences(doc: &Document, entries: &HashSet<Vec<String>>, max_len: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for s in &doc.sentences {
        for i in s.first..=s.last {
            for len in 1..=max_len {
                if i + len - 1 > s.last {
                    break;
                }
                let key: Vec<String> = doc.tokens[i..i + len].iter().map(|t| t.norm.clone()).collect();
                if entries.contains(&key) {
                    out.push((i, i + len - 1));
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// brute-force linking oracle

#[derive(Debug, Clone, PartialEq)]
pub struct OracleCandidate {
    pub qid: String,
    pub n_matching: usize,
    pub n_all: usize,
    pub score: f64,
}

fn qid_num(q: &str) -> u128 {
    q[1..].parse().unwrap()
}

/// Every (sub-n-gram, entity, alias) triple, keeping each entity's longest match.
pub fn oracle_candidates(
    doc: &Document,
    range: TokenRange,
    kb: &KbStore,
    analyzer: &Analyzer,
    max_ngram: usize,
    full_only: bool,
) -> Vec<OracleCandidate> {
    let norms: Vec<String> = doc.tokens[range.first..=range.last].iter().map(|t| t.norm.clone()).collect();
    let n_all = norms.len();
    let mut best: HashMap<String, usize> = HashMap::new();
    for entity in kb.entities() {
        if entity.is_disambiguation {
            continue;
        }
        let aliases = std::iter::once(&entity.name).chain(&entity.synonyms);
        for alias in aliases {
            let alias_norms = analyzer.phrase_norms(alias);
            for start in 0..n_all {
                for len in 1..=n_all - start {
                    let allowed = len == n_all || (!full_only && len <= max_ngram);
                    if allowed && norms[start..start + len] == alias_norms[..] {
                        let e = best.entry(entity.qid.clone()).or_insert(0);
                        *e = (*e).max(len);
                    }
                }
            }
        }
    }
    let mut out: Vec<OracleCandidate> = best
        .into_iter()
        .map(|(qid, n)| OracleCandidate {
            qid,
            n_matching: n,
            n_all,
            score: n as f64 / n_all as f64,
        })
        .collect();
    out.sort_by_key(|c| qid_num(&c.qid));
    out
}

fn mean_vector(words: &[String], emb: &EmbeddingStore) -> Option<Vec<f64>> {
    let known: Vec<&[f64]> = words.iter().filter_map(|w| emb.get(w)).collect();
    if known.is_empty() {
        return None;
    }
    let mut v = vec![0.0; emb.dimension()];
    for k in &known {
        for (a, b) in v.iter_mut().zip(k.iter()) {
            *a += b;
        }
    }
    Some(v.iter().map(|x| x / known.len() as f64).collect())
}

fn oracle_cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (na > 0.0 && nb > 0.0).then(|| dot / (na * nb))
}

/// Weighted-cosine ranking: scored candidates by score desc then qid, then unscored by qid.
pub fn oracle_rank_cosine(
    cands: &[OracleCandidate],
    doc: &Document,
    range: TokenRange,
    window: usize,
    kb: &KbStore,
    emb: &EmbeddingStore,
    analyzer: &Analyzer,
) -> Vec<OracleCandidate> {
    let lo = range.first.saturating_sub(window);
    let hi = (range.last + window).min(doc.tokens.len() - 1);
    let context: Vec<String> = doc.tokens[lo..=hi].iter().map(|t| t.norm.clone()).collect();
    let mention = mean_vector(&context, emb);
    let mut scored = Vec::new();
    let mut unscored = Vec::new();
    for c in cands {
        let e: &EntityRecord = kb.get(&c.qid).unwrap();
        let mut words = analyzer.phrase_norms(&e.name);
        words.extend(analyzer.phrase_norms(&e.description));
        for s in &e.synonyms {
            words.extend(analyzer.phrase_norms(s));
        }
        let sim = match (&mention, mean_vector(&words, emb)) {
            (Some(m), Some(v)) => oracle_cosine(m, &v),
            _ => None,
        };
        let weight = c.n_matching as f64 / c.n_all as f64;
        match sim {
            Some(s) => scored.push(OracleCandidate {
                score: s * weight,
                ..c.clone()
            }),
            None => unscored.push(OracleCandidate { score: 0.0, ..c.clone() }),
        }
    }
    scored.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(qid_num(&a.qid).cmp(&qid_num(&b.qid)))
    });
    unscored.sort_by_key(|c| qid_num(&c.qid));
    scored.extend(unscored);
    scored
}

pub fn oracle_rank_baseline(cands: &[OracleCandidate], kb: &KbStore) -> Vec<OracleCandidate> {
    let mut out: Vec<OracleCandidate> = cands
        .iter()
        .map(|c| {
            let e = kb.get(&c.qid).unwrap();
            OracleCandidate {
                score: (e.num_links + e.num_relations) as f64,
                ..c.clone()
            }
        })
        .collect();
    out.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(qid_num(&a.qid).cmp(&qid_num(&b.qid)))
    });
    out
}

/// Every span of up to `max_len` tokens in `doc` that contains a word.
pub fn word_spans(doc: &Document, max_len: usize) -> Vec<TokenRange> {
    let mut out = Vec::new();
    for i in 0..doc.len() {
        for len in 1..=max_len {
            if i + len > doc.len() {
                break;
            }
            let r = TokenRange::new(i, i + len - 1);
            if doc.tokens[r.first..=r.last].iter().any(|t| t.is_word()) {
                out.push(r);
            }
        }
    }
    out
}
