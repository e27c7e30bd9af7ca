//! Document identifier construction.
//!
//! Two schemes: Title+URL (TU) identifiers built from reversed URL paths with
//! a title+domain fallback, and product-quantization (PQ) identifiers built
//! from k-means codebooks over document embeddings. Either way, identifiers
//! are made corpus-unique by appending disambiguation tokens to collisions.

pub mod pq;

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;
use crate::num::Scalar;
use crate::text::tokenize;

pub use pq::{
    build_embedding_table, embed_document, encode_pq, fit_pq_codebook, group_codes,
    EmbeddingTable, PqCodebook, PqFit,
};

#[derive(Debug, Error)]
pub enum DocIdError {
    #[error("document {0:?} has neither url nor title")]
    NoIdentifierSource(String),
    #[error("embedding dim {dim} not divisible by n_groups {n_groups}")]
    NonDivisibleDim { dim: usize, n_groups: usize },
    #[error("{points} usable points but k_centers = {k_centers}")]
    TooFewPoints { points: usize, k_centers: usize },
    #[error("vector dim {got} does not match codebook dim {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("doc_id {0:?} has no embedding")]
    MissingEmbedding(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Tu,
    Pq,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Tu => write!(f, "tu"),
            Scheme::Pq => write!(f, "pq"),
        }
    }
}

impl FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "tu" => Ok(Scheme::Tu),
            "pq" => Ok(Scheme::Pq),
            other => Err(format!("unknown scheme {other:?}")),
        }
    }
}

/// One symbolic token of a document identifier. The model's vocabulary
/// assigns numeric ids to the rendered forms.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DocToken {
    /// Lowercase word from a URL or title.
    Word(String),
    /// Product-quantization code: group x center.
    Pq { group: u32, center: u32 },
    /// Collision suffix `#0`, `#1`, ...
    Disambig(u32),
}

impl fmt::Display for DocToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DocToken::Word(w) => write!(f, "{w}"),
            DocToken::Pq { group, center } => write!(f, "pq_{group}_{center}"),
            DocToken::Disambig(n) => write!(f, "#{n}"),
        }
    }
}

impl FromStr for DocToken {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if let Some(rest) = s.strip_prefix('#') {
            let n = rest.parse().map_err(|_| format!("bad disambiguation token {s:?}"))?;
            return Ok(DocToken::Disambig(n));
        }
        if let Some(rest) = s.strip_prefix("pq_") {
            if let Some((g, c)) = rest.split_once('_') {
                if let (Ok(group), Ok(center)) = (g.parse(), c.parse()) {
                    return Ok(DocToken::Pq { group, center });
                }
            }
        }
        if s.is_empty() {
            return Err("empty docid token".into());
        }
        Ok(DocToken::Word(s.to_string()))
    }
}

/// A document's identifier: the token sequence the model learns to generate
/// (EOS is appended at vocabulary-encoding time, not stored here).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocId {
    pub tokens: Vec<DocToken>,
    pub scheme: Scheme,
    pub source_doc: String,
}

/// Path segments that never count as semantically rich on their own.
const GENERIC_SEGMENTS: [&str; 6] = ["index", "page", "html", "default", "article", "view"];

/// Strip scheme and a leading `www.`, then split on `/` into non-empty
/// segments. The first segment is the host.
fn url_segments(url: &str) -> Vec<&str> {
    let rest = match url.find("://") {
        Some(i) => &url[i + 3..],
        None => url,
    };
    let rest = rest.strip_prefix("www.").unwrap_or(rest);
    rest.split('/').filter(|s| !s.is_empty()).collect()
}

/// A URL is semantically rich when some path segment (host excluded) carries
/// an alphabetic run of length >= 4 that is not a generic page word.
fn url_is_rich(segments: &[&str]) -> bool {
    segments.iter().skip(1).any(|seg| {
        let mut run = String::new();
        let mut runs = Vec::new();
        for c in seg.chars() {
            if c.is_alphabetic() {
                run.push(c);
            } else if !run.is_empty() {
                runs.push(std::mem::take(&mut run));
            }
        }
        if !run.is_empty() {
            runs.push(run);
        }
        runs.iter()
            .any(|r| r.chars().count() >= 4 && !GENERIC_SEGMENTS.contains(&r.to_lowercase().as_str()))
    })
}

/// TU identifier: reversed URL path when the URL is semantically rich,
/// otherwise title followed by domain.
pub fn make_tu_docid(doc: &Document) -> Result<Vec<DocToken>, DocIdError> {
    let segments: Vec<&str> = doc.url.as_deref().map(url_segments).unwrap_or_default();
    let tokens: Vec<String> = if !segments.is_empty() && url_is_rich(&segments) {
        segments.iter().rev().flat_map(|seg| tokenize(seg)).collect()
    } else {
        let domain = segments.first().map(|host| tokenize(host)).unwrap_or_default();
        tokenize(&doc.title).into_iter().chain(domain).collect()
    };
    if tokens.is_empty() {
        return Err(DocIdError::NoIdentifierSource(doc.doc_id.clone()));
    }
    Ok(tokens.into_iter().map(DocToken::Word).collect())
}

/// Scheme-specific inputs for [`assign_unique_docids`].
pub enum SchemeInput<'a, F: Scalar> {
    Tu,
    Pq { table: &'a EmbeddingTable<F>, codebook: &'a PqCodebook<F> },
}

/// Build one identifier per document and disambiguate collisions: identical
/// token sequences get `#0`, `#1`, ... appended in ascending doc_id order.
pub fn assign_unique_docids<F: Scalar>(
    corpus: &[Document],
    input: SchemeInput<'_, F>,
) -> Result<BTreeMap<String, DocId>, DocIdError> {
    let mut raw: Vec<(String, Vec<DocToken>)> = Vec::with_capacity(corpus.len());
    match input {
        SchemeInput::Tu => {
            for doc in corpus {
                raw.push((doc.doc_id.clone(), make_tu_docid(doc)?));
            }
        }
        SchemeInput::Pq { table, codebook } => {
            for doc in corpus {
                let v = table
                    .vectors
                    .get(&doc.doc_id)
                    .ok_or_else(|| DocIdError::MissingEmbedding(doc.doc_id.clone()))?;
                let codes = group_codes(v, codebook)?;
                let tokens = codes
                    .iter()
                    .enumerate()
                    .map(|(g, &c)| DocToken::Pq { group: g as u32, center: c as u32 })
                    .collect();
                raw.push((doc.doc_id.clone(), tokens));
            }
        }
    }
    let scheme = match input {
        SchemeInput::Tu => Scheme::Tu,
        SchemeInput::Pq { .. } => Scheme::Pq,
    };
    Ok(dedup_docids(raw, scheme))
}

pub fn assign_tu_docids(corpus: &[Document]) -> Result<BTreeMap<String, DocId>, DocIdError> {
    assign_unique_docids::<f64>(corpus, SchemeInput::Tu)
}

pub fn assign_pq_docids<F: Scalar>(
    corpus: &[Document],
    table: &EmbeddingTable<F>,
    codebook: &PqCodebook<F>,
) -> Result<BTreeMap<String, DocId>, DocIdError> {
    assign_unique_docids(corpus, SchemeInput::Pq { table, codebook })
}

fn dedup_docids(raw: Vec<(String, Vec<DocToken>)>, scheme: Scheme) -> BTreeMap<String, DocId> {
    let mut groups: BTreeMap<Vec<DocToken>, Vec<String>> = BTreeMap::new();
    for (doc_id, tokens) in raw {
        groups.entry(tokens).or_default().push(doc_id);
    }
    let mut out = BTreeMap::new();
    for (tokens, mut doc_ids) in groups {
        doc_ids.sort();
        let collided = doc_ids.len() > 1;
        for (i, doc_id) in doc_ids.into_iter().enumerate() {
            let mut t = tokens.clone();
            if collided {
                t.push(DocToken::Disambig(i as u32));
            }
            out.insert(doc_id.clone(), DocId { tokens: t, scheme, source_doc: doc_id });
        }
    }
    out
}

/// TSV persistence: `doc_id \t scheme \t space-joined tokens`.
pub fn write_docid_map(path: &Path, map: &BTreeMap<String, DocId>) -> Result<(), DocIdError> {
    let mut w = BufWriter::new(File::create(path)?);
    for (doc_id, docid) in map {
        let toks: Vec<String> = docid.tokens.iter().map(|t| t.to_string()).collect();
        writeln!(w, "{}\t{}\t{}", doc_id, docid.scheme, toks.join(" "))?;
    }
    Ok(())
}

pub fn read_docid_map(path: &Path) -> Result<BTreeMap<String, DocId>, DocIdError> {
    let reader = BufReader::new(File::open(path)?);
    let mut map = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.splitn(3, '\t').collect();
        if fields.len() != 3 {
            return Err(DocIdError::MalformedRecord {
                line: lineno,
                reason: "expected `doc_id \\t scheme \\t tokens`".into(),
            });
        }
        let scheme = Scheme::from_str(fields[1])
            .map_err(|reason| DocIdError::MalformedRecord { line: lineno, reason })?;
        let tokens = fields[2]
            .split(' ')
            .filter(|s| !s.is_empty())
            .map(DocToken::from_str)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|reason| DocIdError::MalformedRecord { line: lineno, reason })?;
        map.insert(
            fields[0].to_string(),
            DocId { tokens, scheme, source_doc: fields[0].to_string() },
        );
    }
    Ok(map)
}
