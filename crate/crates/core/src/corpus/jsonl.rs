//! One document per line:
//!
//! ```text
//! {"id": str, "text": str, "tokens": [{"s": int, "e": int, "norm": str?}],
//!  "sentences": [[first, last]], "terms": [{"range": [i, j], "source": str}],
//!  "relations": [{"arg1": [i, j], "arg2": [i, j], "label": str}],
//!  "links": [{"range": [i, j], "qid": str|null, "candidates": [str]?}]}
//! ```
//!
//! Offsets are character offsets into `text`. `tokens` and `sentences` may
//! be omitted, in which case the text is tokenized and segmented on read.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    is_latin_script, AnnotatedDocument, Analyzer, Document, TermAnnotation,
    TermSource, Token, TokenRange,
};
use crate::kb::is_valid_qid;
use crate::linker::LinkAnnotation;
use crate::relation::{RelationInstance, RelationLabel};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed JSON")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line} (document {id:?}): {message}")]
    Invalid {
        line: usize,
        id: String,
        message: String,
    },
    #[error("{path}: {source}")]
    InFile {
        path: String,
        #[source]
        source: Box<CorpusError>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TokenRecord {
    s: usize,
    e: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    norm: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TermRecord {
    range: TokenRange,
    source: TermSource,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RelationRecord {
    arg1: TokenRange,
    arg2: TokenRange,
    label: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LinkRecord {
    range: TokenRange,
    qid: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    candidates: Option<Vec<String>>,
}

/// Wire form of one JSONL line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DocumentRecord {
    id: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tokens: Option<Vec<TokenRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sentences: Option<Vec<TokenRange>>,
    #[serde(default)]
    terms: Vec<TermRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    nested_terms: Vec<TermRecord>,
    #[serde(default)]
    relations: Vec<RelationRecord>,
    #[serde(default)]
    links: Vec<LinkRecord>,
}

impl From<&AnnotatedDocument> for DocumentRecord {
    fn from(doc: &AnnotatedDocument) -> Self {
        let d = &doc.document;
        DocumentRecord {
            id: d.id.clone(),
            text: d.text.clone(),
            tokens: Some(
                d.tokens
                    .iter()
                    .map(|t| TokenRecord {
                        s: t.start,
                        e: t.end,
                        norm: Some(t.norm.clone()),
                    })
                    .collect(),
            ),
            sentences: Some(d.sentences.clone()),
            terms: doc.terms.iter().map(term_record).collect(),
            nested_terms: doc.nested_terms.iter().map(term_record).collect(),
            relations: doc
                .relations
                .iter()
                .map(|r| RelationRecord {
                    arg1: r.arg1,
                    arg2: r.arg2,
                    label: r.label.to_string(),
                })
                .collect(),
            links: doc
                .links
                .iter()
                .map(|l| LinkRecord {
                    range: l.range,
                    qid: l.qid.clone(),
                    candidates: l.candidates.clone(),
                })
                .collect(),
        }
    }
}

fn term_record(t: &TermAnnotation) -> TermRecord {
    TermRecord {
        range: t.range,
        source: t.source,
    }
}

impl DocumentRecord {
    /// Validate and convert into the in-memory model.
    pub fn into_document(
        self,
        analyzer: &Analyzer,
        line: usize,
    ) -> Result<AnnotatedDocument, CorpusError> {
        let id = self.id.clone();
        let invalid = |message: String| CorpusError::Invalid {
            line,
            id: id.clone(),
            message,
        };

        let document = match self.tokens {
            None => {
                let mut doc = analyzer.tokenize(self.id, self.text);
                if let Some(sentences) = self.sentences {
                    check_sentences(&sentences, doc.tokens.len()).map_err(&invalid)?;
                    doc.sentences = sentences;
                }
                doc
            }
            Some(records) => {
                let chars: Vec<char> = self.text.chars().collect();
                let mut tokens = Vec::with_capacity(records.len());
                let mut prev_end = 0;
                for (i, r) in records.into_iter().enumerate() {
                    if r.s >= r.e || r.e > chars.len() || r.s < prev_end {
                        return Err(invalid(format!(
                            "token {i} has invalid or overlapping offsets [{}, {})",
                            r.s, r.e
                        )));
                    }
                    prev_end = r.e;
                    let surface: String = chars[r.s..r.e].iter().collect();
                    let norm = r.norm.unwrap_or_else(|| analyzer.normalize(&surface));
                    if norm.is_empty() && surface.chars().any(char::is_alphanumeric) {
                        return Err(invalid(format!("token {i} has an empty norm")));
                    }
                    tokens.push(Token {
                        is_latin_script: is_latin_script(&surface),
                        surface,
                        start: r.s,
                        end: r.e,
                        norm,
                    });
                }
                let sentences = match self.sentences {
                    Some(s) => s,
                    None => analyzer.segment(&chars, &tokens),
                };
                check_sentences(&sentences, tokens.len()).map_err(&invalid)?;
                Document {
                    id: self.id,
                    text: self.text,
                    tokens,
                    sentences,
                }
            }
        };

        let n = document.tokens.len();
        let check_range = |r: &TokenRange, what: &str| -> Result<(), CorpusError> {
            if r.first > r.last || r.last >= n {
                Err(invalid(format!("{what} range {r} is out of bounds")))
            } else {
                Ok(())
            }
        };

        let mut terms: Vec<TermAnnotation> = Vec::with_capacity(self.terms.len());
        for t in &self.terms {
            check_range(&t.range, "term")?;
            terms.push(TermAnnotation::new(t.range, t.source));
        }
        terms.sort_by_key(|t| t.range);
        for w in terms.windows(2) {
            if w[0].range.overlaps(&w[1].range) {
                return Err(invalid(format!(
                    "terms {} and {} overlap",
                    w[0].range, w[1].range
                )));
            }
        }

        let mut nested_terms = Vec::with_capacity(self.nested_terms.len());
        for t in &self.nested_terms {
            check_range(&t.range, "nested term")?;
            if !terms
                .iter()
                .any(|outer| outer.range.covers(&t.range) && outer.range != t.range)
            {
                return Err(invalid(format!(
                    "nested term {} is not strictly inside a top-level term",
                    t.range
                )));
            }
            nested_terms.push(TermAnnotation::new(t.range, t.source));
        }

        let mut relations = Vec::with_capacity(self.relations.len());
        for r in &self.relations {
            check_range(&r.arg1, "relation argument")?;
            check_range(&r.arg2, "relation argument")?;
            let label: RelationLabel = r.label.parse().map_err(|e| invalid(format!("{e}")))?;
            let instance = RelationInstance::new(&document, r.arg1, r.arg2, label)
                .map_err(|e| invalid(e.to_string()))?;
            relations.push(instance);
        }

        let mut links = Vec::with_capacity(self.links.len());
        for l in self.links {
            check_range(&l.range, "link")?;
            if let Some(q) = &l.qid {
                if !is_valid_qid(q) {
                    return Err(invalid(format!("link qid {q:?} does not match Q[0-9]+")));
                }
            }
            links.push(LinkAnnotation {
                range: l.range,
                qid: l.qid,
                candidates: l.candidates,
            });
        }

        Ok(AnnotatedDocument {
            document,
            terms,
            nested_terms,
            relations,
            links,
        })
    }
}

fn check_sentences(sentences: &[TokenRange], n_tokens: usize) -> Result<(), String> {
    let mut next = 0;
    for s in sentences {
        if s.first != next || s.first > s.last {
            return Err(format!("sentence {s} does not continue the partition at token {next}"));
        }
        next = s.last + 1;
    }
    if next != n_tokens {
        return Err(format!(
            "sentences cover {next} tokens but the document has {n_tokens}"
        ));
    }
    Ok(())
}

pub fn read_annotations_from<R: BufRead>(
    reader: R,
    analyzer: &Analyzer,
) -> Result<Vec<AnnotatedDocument>, CorpusError> {
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: format!("<line {line_no}>"),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DocumentRecord = serde_json::from_str(&line).map_err(|source| {
            CorpusError::Parse {
                line: line_no,
                source,
            }
        })?;
        docs.push(record.into_document(analyzer, line_no)?);
    }
    Ok(docs)
}

/// Read a JSONL file, or every `*.jsonl` and `*.txt` file of a directory
/// in file-name order. A `.txt` file is one bare document named after its stem.
pub fn read_annotations(
    path: impl AsRef<Path>,
    analyzer: &Analyzer,
) -> Result<Vec<AnnotatedDocument>, CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    if !path.is_dir() {
        let file = File::open(path).map_err(io_err)?;
        return read_annotations_from(BufReader::new(file), analyzer);
    }
    let mut files = Vec::new();
    for entry in fs::read_dir(path).map_err(io_err)? {
        let p = entry.map_err(io_err)?.path();
        if p.is_file() && matches!(p.extension().and_then(|e| e.to_str()), Some("jsonl" | "txt")) {
            files.push(p);
        }
    }
    files.sort();
    let mut docs = Vec::new();
    for file in files {
        let in_file = |source| CorpusError::InFile {
            path: file.display().to_string(),
            source: Box::new(source),
        };
        if file.extension().is_some_and(|e| e == "txt") {
            let text = fs::read_to_string(&file).map_err(|source| CorpusError::Io {
                path: file.display().to_string(),
                source,
            })?;
            let id = file.file_stem().unwrap_or_default().to_string_lossy();
            docs.push(AnnotatedDocument::new(analyzer.tokenize(id, text)));
        } else {
            docs.extend(read_annotations(&file, analyzer).map_err(in_file)?);
        }
    }
    Ok(docs)
}

pub fn write_annotations_to<W: Write>(
    docs: &[AnnotatedDocument],
    mut writer: W,
) -> std::io::Result<()> {
    for doc in docs {
        let line = serde_json::to_string(&DocumentRecord::from(doc))?;
        writer.write_all(line.as_bytes())?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn write_annotations(
    docs: &[AnnotatedDocument],
    path: impl AsRef<Path>,
) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    write_annotations_to(docs, BufWriter::new(file)).map_err(io_err)
}
