//! Term dictionary: n-gram mining with TF-IDF ranking, and loading/saving
//! the one-term-per-line dictionary files used for weak supervision.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::corpus::{Analyzer, Document};

pub const DEFAULT_MAX_NGRAM: usize = 4;

#[derive(Debug, Error)]
pub enum DictionaryError {
    #[error("cannot mine n-grams from an empty corpus")]
    EmptyCorpus,
    #[error("n-gram size {0} is outside 1..=6")]
    BadNgramSize(usize),
    #[error("n-gram {ngram:?} has document frequency {df} for a corpus of {corpus_size}")]
    BadDocumentFrequency {
        ngram: String,
        df: usize,
        corpus_size: usize,
    },
    #[error("i/o error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Set of normalized terms (space-joined token norms).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TermDictionary {
    entries: BTreeMap<String, usize>,
    max_ngram: usize,
}

impl Default for TermDictionary {
    fn default() -> Self {
        TermDictionary::new(DEFAULT_MAX_NGRAM)
    }
}

impl TermDictionary {
    pub fn new(max_ngram: usize) -> Self {
        TermDictionary {
            entries: BTreeMap::new(),
            max_ngram: max_ngram.max(1),
        }
    }

    pub fn max_ngram(&self) -> usize {
        self.max_ngram
    }

    /// Insert already-normalized token norms. Returns false when the entry is
    /// empty, too long, or already present.
    pub fn insert_norms<S: AsRef<str>>(&mut self, norms: &[S]) -> bool {
        if norms.is_empty() || norms.len() > self.max_ngram {
            return false;
        }
        let key = norms.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" ");
        if self.entries.contains_key(&key) {
            return false;
        }
        self.entries.insert(key, norms.len());
        true
    }

    /// Tokenize and normalize a raw term, then insert it.
    pub fn insert_raw(&mut self, raw: &str, analyzer: &Analyzer) -> bool {
        let norms = analyzer.phrase_norms(raw);
        self.insert_norms(&norms)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries with their token counts, in lexicographic order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.entries.iter().map(|(k, &n)| (k.as_str(), n))
    }

    /// Longest entry actually present, in tokens.
    pub fn longest_entry(&self) -> usize {
        self.entries.values().copied().max().unwrap_or(0)
    }

    /// Set union; the result admits the longer of the two length caps.
    pub fn merge(&self, other: &TermDictionary) -> TermDictionary {
        let mut out = TermDictionary::new(self.max_ngram.max(other.max_ngram));
        out.entries = self.entries.clone();
        for (k, &n) in &other.entries {
            out.entries.entry(k.clone()).or_insert(n);
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub raw_lines: usize,
    pub entries: usize,
    pub duplicates: usize,
    pub too_long: usize,
}

pub fn load_dictionary_from<R: BufRead>(
    reader: R,
    analyzer: &Analyzer,
    max_ngram: usize,
) -> std::io::Result<(TermDictionary, LoadReport)> {
    let mut dict = TermDictionary::new(max_ngram);
    let mut report = LoadReport::default();
    for line in reader.lines() {
        let line = line?;
        let term = line.trim_start_matches('\u{feff}').trim();
        if term.is_empty() {
            continue;
        }
        report.raw_lines += 1;
        let norms = analyzer.phrase_norms(term);
        if norms.len() > dict.max_ngram() {
            report.too_long += 1;
        } else if !dict.insert_norms(&norms) {
            report.duplicates += 1;
        }
    }
    report.entries = dict.len();
    Ok((dict, report))
}

pub fn load_dictionary(
    path: impl AsRef<Path>,
    analyzer: &Analyzer,
    max_ngram: usize,
) -> Result<(TermDictionary, LoadReport), DictionaryError> {
    let path = path.as_ref();
    let io_err = |source| DictionaryError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    load_dictionary_from(BufReader::new(file), analyzer, max_ngram).map_err(io_err)
}

pub fn save_dictionary(dict: &TermDictionary, path: impl AsRef<Path>) -> Result<(), DictionaryError> {
    let path = path.as_ref();
    let io_err = |source| DictionaryError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for (entry, _) in dict.iter() {
        writeln!(w, "{entry}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NGramStat {
    pub ngram: Vec<String>,
    /// Occurrences summed over the whole corpus.
    pub tf: usize,
    /// Number of documents containing the n-gram.
    pub df: usize,
    pub tfidf: f64,
}

impl NGramStat {
    pub fn key(&self) -> String {
        self.ngram.join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountOver {
    Norms,
    /// Lowercased surfaces, for corpora where lemmatization is unwanted.
    Surfaces,
}

/// Count every n-gram of the requested sizes that stays inside one
/// sentence and contains no punctuation-only token.
///
/// Output is sorted by n-gram; `tfidf` is left at zero until ranking.
pub fn mine_ngrams(
    corpus: &[Document],
    n_values: &BTreeSet<usize>,
    over: CountOver,
) -> Result<Vec<NGramStat>, DictionaryError> {
    if corpus.is_empty() {
        return Err(DictionaryError::EmptyCorpus);
    }
    if let Some(&bad) = n_values.iter().find(|&&n| !(1..=6).contains(&n)) {
        return Err(DictionaryError::BadNgramSize(bad));
    }
    let mut counts: BTreeMap<Vec<String>, (usize, usize)> = BTreeMap::new();
    for doc in corpus {
        let forms: Vec<String> = doc
            .tokens
            .iter()
            .map(|t| match over {
                CountOver::Norms => t.norm.clone(),
                CountOver::Surfaces => t.surface.to_lowercase(),
            })
            .collect();
        let mut seen: HashSet<&[String]> = HashSet::new();
        for sentence in &doc.sentences {
            for &n in n_values {
                if n > sentence.len() {
                    continue;
                }
                for start in sentence.first..=sentence.last + 1 - n {
                    if !doc.tokens[start..start + n].iter().all(|t| t.is_word()) {
                        continue;
                    }
                    let gram = &forms[start..start + n];
                    let entry = counts.entry(gram.to_vec()).or_insert((0, 0));
                    entry.0 += 1;
                    if seen.insert(gram) {
                        entry.1 += 1;
                    }
                }
            }
        }
    }
    Ok(counts
        .into_iter()
        .map(|(ngram, (tf, df))| NGramStat {
            ngram,
            tf,
            df,
            tfidf: 0.0,
        })
        .collect())
}

/// Fill in `tfidf = tf * ln(corpus_size / df)` and sort descending, ties
/// broken by the space-joined n-gram.
pub fn rank_by_tfidf(
    mut stats: Vec<NGramStat>,
    corpus_size: usize,
) -> Result<Vec<NGramStat>, DictionaryError> {
    for s in &mut stats {
        if s.df == 0 || s.df > corpus_size {
            return Err(DictionaryError::BadDocumentFrequency {
                ngram: s.key(),
                df: s.df,
                corpus_size,
            });
        }
        s.tfidf = s.tf as f64 * (corpus_size as f64 / s.df as f64).ln();
    }
    let mut keyed: Vec<(String, NGramStat)> = stats.into_iter().map(|s| (s.key(), s)).collect();
    keyed.sort_by(|(ka, a), (kb, b)| b.tfidf.total_cmp(&a.tfidf).then_with(|| ka.cmp(kb)));
    Ok(keyed.into_iter().map(|(_, s)| s).collect())
}

/// `ngram \t tf \t df \t tfidf`, one row per line.
pub fn write_ranked_tsv<W: Write>(stats: &[NGramStat], mut w: W) -> std::io::Result<()> {
    for s in stats {
        writeln!(w, "{}\t{}\t{}\t{:.6}", s.key(), s.tf, s.df, s.tfidf)?;
    }
    w.flush()
}
