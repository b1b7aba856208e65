//! Knowledge-base store (JSONL entity dump indexed by normalized names and
//! synonyms) and the word-vector store used for ranking.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Analyzer;

/// Description substrings that mark a disambiguation page, matched case-insensitively.
pub const DEFAULT_DISAMBIGUATION_MARKERS: &[&str] = &["disambiguation page", "страница значений"];

#[derive(Debug, Error)]
pub enum KbError {
    #[error("i/o error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed entity record")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: qid {qid:?} does not match Q[0-9]+")]
    BadQid { line: usize, qid: String },
    #[error("embedding file: {0}")]
    BadHeader(String),
    #[error("embedding row {row}: expected {expected} values, found {found}")]
    DimensionMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("embedding row {row}: bad number {value:?}")]
    BadNumber { row: usize, value: String },
}

/// `Q` followed by one or more ASCII digits.
pub fn is_valid_qid(qid: &str) -> bool {
    qid.strip_prefix('Q')
        .is_some_and(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
}

/// Sort key giving numeric qid order without overflow.
pub fn qid_order_key(qid: &str) -> (usize, &str) {
    let digits = qid.trim_start_matches('Q').trim_start_matches('0');
    (digits.len(), digits)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub qid: String,
    pub name: String,
    #[serde(default)]
    pub synonyms: Vec<String>,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub is_disambiguation: bool,
    /// Links to other knowledge bases.
    #[serde(default)]
    pub num_links: u64,
    /// Statements pointing at other entities.
    #[serde(default)]
    pub num_relations: u64,
}

impl EntityRecord {
    /// Name followed by synonyms.
    pub fn aliases(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.name.as_str()).chain(self.synonyms.iter().map(String::as_str))
    }
}

#[derive(Debug, Clone)]
pub struct KbOptions {
    pub disambiguation_markers: Vec<String>,
}

impl Default for KbOptions {
    fn default() -> Self {
        KbOptions {
            disambiguation_markers: DEFAULT_DISAMBIGUATION_MARKERS
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct KbStore {
    entities: Vec<EntityRecord>,
    by_qid: HashMap<String, usize>,
    /// normalized alias key -> entity indices in ascending qid order
    index: HashMap<String, Vec<usize>>,
    pub warnings: Vec<String>,
}

impl KbStore {
    /// Build an index over `records`; a repeated qid replaces the earlier record.
    pub fn from_records(
        records: impl IntoIterator<Item = EntityRecord>,
        analyzer: &Analyzer,
        options: &KbOptions,
    ) -> KbStore {
        let mut latest: BTreeMap<String, EntityRecord> = BTreeMap::new();
        let mut warnings = Vec::new();
        for mut record in records {
            let lower = record.description.to_lowercase();
            if options
                .disambiguation_markers
                .iter()
                .any(|m| lower.contains(&m.to_lowercase()))
            {
                record.is_disambiguation = true;
            }
            if latest.contains_key(&record.qid) {
                let msg = format!("duplicate qid {}; keeping the last record", record.qid);
                warn!("{msg}");
                warnings.push(msg);
            }
            latest.insert(record.qid.clone(), record);
        }
        let mut entities: Vec<EntityRecord> = latest.into_values().collect();
        entities.sort_by(|a, b| qid_order_key(&a.qid).cmp(&qid_order_key(&b.qid)));

        let mut index: HashMap<String, Vec<usize>> = HashMap::new();
        let mut by_qid = HashMap::new();
        for (i, e) in entities.iter().enumerate() {
            by_qid.insert(e.qid.clone(), i);
            let keys: BTreeSet<String> = e
                .aliases()
                .map(|a| analyzer.phrase_key(a))
                .filter(|k| !k.is_empty())
                .collect();
            for k in keys {
                index.entry(k).or_default().push(i);
            }
        }
        KbStore {
            entities,
            by_qid,
            index,
            warnings,
        }
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    /// All entities in ascending qid order.
    pub fn entities(&self) -> &[EntityRecord] {
        &self.entities
    }

    pub fn get(&self, qid: &str) -> Option<&EntityRecord> {
        self.by_qid.get(qid).map(|&i| &self.entities[i])
    }

    /// Entities whose normalized name or synonym equals `normalized_phrase`,
    /// in ascending qid order.
    pub fn lookup_exact(&self, normalized_phrase: &str) -> Vec<&EntityRecord> {
        self.index
            .get(normalized_phrase)
            .map(|ids| ids.iter().map(|&i| &self.entities[i]).collect())
            .unwrap_or_default()
    }

    pub fn alias_keys(&self) -> usize {
        self.index.len()
    }
}

pub fn load_kb_from<R: BufRead>(
    reader: R,
    analyzer: &Analyzer,
    options: &KbOptions,
) -> Result<KbStore, KbError> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| KbError::Io {
            path: format!("<line {line_no}>"),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: EntityRecord = serde_json::from_str(&line).map_err(|source| KbError::Parse {
            line: line_no,
            source,
        })?;
        if !is_valid_qid(&record.qid) {
            return Err(KbError::BadQid {
                line: line_no,
                qid: record.qid,
            });
        }
        records.push(record);
    }
    Ok(KbStore::from_records(records, analyzer, options))
}

pub fn load_kb(
    path: impl AsRef<Path>,
    analyzer: &Analyzer,
    options: &KbOptions,
) -> Result<KbStore, KbError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| KbError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_kb_from(BufReader::new(file), analyzer, options)
}

/// Write the store back as a JSONL dump, one entity per line in qid order.
pub fn write_kb<W: Write>(store: &KbStore, mut w: W) -> std::io::Result<()> {
    for e in store.entities() {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

#[derive(Debug, Clone, Default)]
pub struct EmbeddingStore {
    dimension: usize,
    vectors: HashMap<String, Vec<f64>>,
    pub warnings: Vec<String>,
}

impl EmbeddingStore {
    pub fn new(dimension: usize) -> Self {
        EmbeddingStore {
            dimension,
            ..Default::default()
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Insert under an already-normalized word; the first vector for a word wins.
    pub fn insert(&mut self, word: String, vector: Vec<f64>) -> bool {
        assert_eq!(vector.len(), self.dimension, "vector dimension");
        if self.vectors.contains_key(&word) {
            return false;
        }
        self.vectors.insert(word, vector);
        true
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    /// Mean vector of the in-vocabulary tokens; `None` when none is known.
    ///
    /// Vectors are summed in sorted-token order so the result does not depend
    /// on the order of `tokens`.
    pub fn embed_phrase<S: AsRef<str>>(&self, tokens: &[S]) -> Option<Vec<f64>> {
        let mut known: Vec<&str> = tokens
            .iter()
            .map(AsRef::as_ref)
            .filter(|t| self.vectors.contains_key(*t))
            .collect();
        if known.is_empty() {
            return None;
        }
        known.sort_unstable();
        let mut sum = vec![0.0; self.dimension];
        for t in &known {
            for (s, v) in sum.iter_mut().zip(&self.vectors[*t]) {
                *s += v;
            }
        }
        let n = known.len() as f64;
        Some(sum.into_iter().map(|s| s / n).collect())
    }
}

/// Read a word-vector text file: header `vocab_size dim`, then `word v1 .. vdim`.
pub fn load_embeddings_from<R: BufRead>(reader: R, analyzer: &Analyzer) -> Result<EmbeddingStore, KbError> {
    let mut lines = reader.lines().enumerate();
    let header = loop {
        match lines.next() {
            None => return Err(KbError::BadHeader("missing header".into())),
            Some((_, line)) => {
                let line = line.map_err(|source| KbError::Io {
                    path: "<embeddings>".into(),
                    source,
                })?;
                if !line.trim().is_empty() {
                    break line;
                }
            }
        }
    };
    let fields: Vec<&str> = header.split_whitespace().collect();
    let (declared, dim) = match fields.as_slice() {
        [v, d] => (
            v.parse::<usize>()
                .map_err(|_| KbError::BadHeader(format!("bad vocabulary size {v:?}")))?,
            d.parse::<usize>()
                .map_err(|_| KbError::BadHeader(format!("bad dimension {d:?}")))?,
        ),
        _ => return Err(KbError::BadHeader(format!("expected `vocab_size dim`, got {header:?}"))),
    };
    if dim == 0 {
        return Err(KbError::BadHeader("dimension must be at least 1".into()));
    }

    let mut store = EmbeddingStore::new(dim);
    let mut rows = 0;
    for (i, line) in lines {
        let row = i + 1;
        let line = line.map_err(|source| KbError::Io {
            path: "<embeddings>".into(),
            source,
        })?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values = parts
            .map(|v| {
                v.parse::<f64>().map_err(|_| KbError::BadNumber {
                    row,
                    value: v.to_string(),
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if values.len() != dim {
            return Err(KbError::DimensionMismatch {
                row,
                expected: dim,
                found: values.len(),
            });
        }
        rows += 1;
        let key = analyzer.normalize(word);
        if !store.insert(key.clone(), values) {
            let msg = format!("row {row}: duplicate word {key:?}; keeping the first vector");
            warn!("{msg}");
            store.warnings.push(msg);
        }
    }
    if rows != declared {
        let msg = format!("header declares {declared} rows, file has {rows}");
        warn!("{msg}");
        store.warnings.push(msg);
    }
    Ok(store)
}

pub fn load_embeddings(path: impl AsRef<Path>, analyzer: &Analyzer) -> Result<EmbeddingStore, KbError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| KbError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_embeddings_from(BufReader::new(file), analyzer)
}

pub fn write_embeddings<W: Write>(store: &EmbeddingStore, mut w: W) -> std::io::Result<()> {
    let mut words: Vec<&String> = store.vectors.keys().collect();
    words.sort();
    writeln!(w, "{} {}", words.len(), store.dimension)?;
    for word in words {
        write!(w, "{word}")?;
        for v in &store.vectors[word] {
            write!(w, " {v}")?;
        }
        writeln!(w)?;
    }
    w.flush()
}

/// Cosine similarity; `None` when either vector has zero norm or the lengths differ.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KbStats {
    pub entities: usize,
    pub disambiguation_pages: usize,
    pub alias_keys: usize,
    pub synonyms: usize,
    pub total_links: u64,
    pub total_relations: u64,
}

pub fn kb_stats(store: &KbStore) -> KbStats {
    let e = store.entities();
    KbStats {
        entities: e.len(),
        disambiguation_pages: e.iter().filter(|x| x.is_disambiguation).count(),
        alias_keys: store.alias_keys(),
        synonyms: e.iter().map(|x| x.synonyms.len()).sum(),
        total_links: e.iter().map(|x| x.num_links).sum(),
        total_relations: e.iter().map(|x| x.num_relations).sum(),
    }
}
