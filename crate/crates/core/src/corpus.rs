//! Corpus ingestion and training-pair synthesis.
//!
//! Loads documents, queries, and relevance judgments from TSV / JSON-lines /
//! TREC formats, and turns a corpus into the four kinds of supervised pairs
//! used for fine-tuning: passage windows, tf-idf key terms, seeded
//! pseudo-queries, and real judged queries.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{mix_seed, tokenize};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("duplicate doc_id {0:?}")]
    DuplicateDocId(String),
    #[error("duplicate query_id {0:?}")]
    DuplicateQueryId(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(&'static str),
    #[error("doc_id {0:?} missing from docid map")]
    MissingDocId(String),
    #[error("query_id {0:?} referenced by qrels but not loaded")]
    UnknownQuery(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub url: Option<String>,
    pub title: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: String,
    pub text: String,
}

/// Graded relevance judgments: query_id -> doc_id -> grade.
///
/// Grade >= 1 means relevant.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Qrels {
    pub judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: u32) {
        self.judgments
            .entry(query_id.to_string())
            .or_default()
            .insert(doc_id.to_string(), grade);
    }

    /// Doc ids judged relevant (grade >= 1) for a query, sorted.
    pub fn relevant_docs(&self, query_id: &str) -> Vec<&str> {
        self.judgments
            .get(query_id)
            .map(|docs| {
                docs.iter()
                    .filter(|(_, &g)| g >= 1)
                    .map(|(d, _)| d.as_str())
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn is_relevant(&self, query_id: &str, doc_id: &str) -> bool {
        self.judgments
            .get(query_id)
            .and_then(|docs| docs.get(doc_id))
            .is_some_and(|&g| g >= 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    Passage,
    KeyTerms,
    PseudoQuery,
    RealQuery,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    #[serde(rename = "input")]
    pub input_text: String,
    #[serde(rename = "docid")]
    pub target_docid_ref: String,
    pub kind: PairKind,
}

/// Corpus-level term statistics backing tf-idf scoring.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub num_docs: usize,
    pub doc_freq: BTreeMap<String, usize>,
    pub avg_doc_len: f64,
    pub total_terms: usize,
}

impl CorpusStats {
    pub fn df(&self, term: &str) -> usize {
        self.doc_freq.get(term).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Tsv,
    JsonLines,
}

#[derive(Deserialize)]
struct JsonDocRecord {
    doc_id: String,
    #[serde(default)]
    url: Option<String>,
    title: String,
    #[serde(default)]
    body: String,
}

/// Load a corpus file. TSV columns: `doc_id \t url \t title \t body`
/// (no header); JSON-lines carries the same field names.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<Document>, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    let mut docs = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let doc = match format {
            CorpusFormat::Tsv => {
                let fields: Vec<&str> = line.splitn(4, '\t').collect();
                if fields.len() < 3 {
                    return Err(CorpusError::MalformedRecord {
                        line: lineno,
                        reason: format!("expected >= 3 tab-separated fields, got {}", fields.len()),
                    });
                }
                Document {
                    doc_id: fields[0].to_string(),
                    url: if fields[1].is_empty() { None } else { Some(fields[1].to_string()) },
                    title: fields[2].to_string(),
                    body: fields.get(3).unwrap_or(&"").to_string(),
                }
            }
            CorpusFormat::JsonLines => {
                let rec: JsonDocRecord =
                    serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
                        line: lineno,
                        reason: e.to_string(),
                    })?;
                Document {
                    doc_id: rec.doc_id,
                    url: rec.url.filter(|u| !u.is_empty()),
                    title: rec.title,
                    body: rec.body,
                }
            }
        };
        if doc.doc_id.is_empty() {
            return Err(CorpusError::MalformedRecord { line: lineno, reason: "empty doc_id".into() });
        }
        if doc.title.is_empty() && doc.url.is_none() {
            return Err(CorpusError::MalformedRecord {
                line: lineno,
                reason: "both title and url are empty".into(),
            });
        }
        if !seen.insert(doc.doc_id.clone()) {
            return Err(CorpusError::DuplicateDocId(doc.doc_id));
        }
        docs.push(doc);
    }
    Ok(docs)
}

pub fn write_corpus_tsv(path: &Path, docs: &[Document]) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(File::create(path)?);
    for d in docs {
        writeln!(w, "{}\t{}\t{}\t{}", d.doc_id, d.url.as_deref().unwrap_or(""), d.title, d.body)?;
    }
    Ok(())
}

/// Queries TSV: `query_id \t text`.
pub fn load_queries(path: &Path) -> Result<Vec<Query>, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    let mut queries = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let (qid, text) = line.split_once('\t').ok_or_else(|| CorpusError::MalformedRecord {
            line: lineno,
            reason: "expected `query_id \\t text`".into(),
        })?;
        if qid.is_empty() || text.is_empty() {
            return Err(CorpusError::MalformedRecord {
                line: lineno,
                reason: "empty query_id or text".into(),
            });
        }
        if !seen.insert(qid.to_string()) {
            return Err(CorpusError::DuplicateQueryId(qid.to_string()));
        }
        queries.push(Query { query_id: qid.to_string(), text: text.to_string() });
    }
    Ok(queries)
}

pub fn write_queries_tsv(path: &Path, queries: &[Query]) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(File::create(path)?);
    for q in queries {
        writeln!(w, "{}\t{}", q.query_id, q.text)?;
    }
    Ok(())
}

/// TREC qrels: `query_id 0 doc_id grade`, whitespace-separated.
pub fn load_qrels(path: &Path) -> Result<Qrels, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    let mut qrels = Qrels::default();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(CorpusError::MalformedRecord {
                line: lineno,
                reason: format!("expected 4 whitespace-separated fields, got {}", fields.len()),
            });
        }
        let grade: u32 = fields[3].parse().map_err(|_| CorpusError::MalformedRecord {
            line: lineno,
            reason: format!("bad grade {:?}", fields[3]),
        })?;
        qrels.insert(fields[0], fields[2], grade);
    }
    Ok(qrels)
}

pub fn write_qrels(path: &Path, qrels: &Qrels) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(File::create(path)?);
    for (qid, docs) in &qrels.judgments {
        for (doc_id, grade) in docs {
            writeln!(w, "{qid} 0 {doc_id} {grade}")?;
        }
    }
    Ok(())
}

/// Document-frequency and length statistics over document bodies.
pub fn build_stats(docs: &[Document]) -> CorpusStats {
    let mut doc_freq: BTreeMap<String, usize> = BTreeMap::new();
    let mut total_terms = 0usize;
    for doc in docs {
        let terms = tokenize(&doc.body);
        total_terms += terms.len();
        let distinct: BTreeSet<String> = terms.into_iter().collect();
        for t in distinct {
            *doc_freq.entry(t).or_insert(0) += 1;
        }
    }
    let num_docs = docs.len();
    CorpusStats {
        num_docs,
        doc_freq,
        avg_doc_len: if num_docs > 0 { total_terms as f64 / num_docs as f64 } else { 0.0 },
        total_terms,
    }
}

/// Non-overlapping windows of `m` terms over the document body; a final
/// remainder window of fewer than `m` terms is kept.
pub fn chunk_passages(doc: &Document, m: usize) -> Result<Vec<String>, CorpusError> {
    if m == 0 {
        return Err(CorpusError::InvalidParam("passage length m must be >= 1"));
    }
    let terms = tokenize(&doc.body);
    Ok(terms.chunks(m).map(|w| w.join(" ")).collect())
}

/// Per-document term frequency over the tokenized body.
fn term_frequencies(doc: &Document) -> BTreeMap<String, usize> {
    let mut tf = BTreeMap::new();
    for t in tokenize(&doc.body) {
        *tf.entry(t).or_insert(0) += 1;
    }
    tf
}

/// tf(w, d) * ln(N / df(w)) with no smoothing.
fn tf_idf_scores(doc: &Document, stats: &CorpusStats) -> Vec<(String, f64)> {
    let n = stats.num_docs.max(1) as f64;
    term_frequencies(doc)
        .into_iter()
        .map(|(term, tf)| {
            let df = stats.df(&term).max(1) as f64;
            (term, tf as f64 * (n / df).ln())
        })
        .collect()
}

/// The `t` highest-scoring terms of `doc` by tf-idf, ties broken
/// lexicographically ascending.
pub fn select_key_terms(doc: &Document, stats: &CorpusStats, t: usize) -> Vec<String> {
    let mut scored = tf_idf_scores(doc, stats);
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1).expect("finite tf-idf scores").then_with(|| a.0.cmp(&b.0))
    });
    scored.into_iter().take(t).map(|(term, _)| term).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoQueries {
    pub queries: Vec<String>,
    /// Set when the document's vocabulary could not support `k` distinct
    /// queries (fewer were emitted).
    pub insufficient_vocabulary: bool,
}

/// Deterministic stand-in for a neural query generator: draws `k` distinct
/// 2-4 term queries, terms weighted by the document's tf-idf scores.
pub fn generate_pseudo_queries(
    doc: &Document,
    stats: &CorpusStats,
    k: usize,
    seed: u64,
) -> Result<PseudoQueries, CorpusError> {
    if k == 0 {
        return Err(CorpusError::InvalidParam("pseudo-query count k must be >= 1"));
    }
    let mut weighted = tf_idf_scores(doc, stats);
    // Single-document corpora have idf = 0 everywhere; fall back to tf so the
    // sampler still has a distribution.
    if weighted.iter().all(|(_, w)| *w <= 0.0) {
        let tf = term_frequencies(doc);
        weighted = tf.into_iter().map(|(t, c)| (t, c as f64)).collect();
    }
    let total: f64 = weighted.iter().map(|(_, w)| w).sum();
    let distinct_terms = weighted.len();
    if distinct_terms == 0 {
        return Ok(PseudoQueries { queries: Vec::new(), insufficient_vocabulary: true });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<String> = Vec::with_capacity(k);
    let mut seen = BTreeSet::new();
    let max_attempts = 64 * k + 16;
    for _ in 0..max_attempts {
        if out.len() == k {
            break;
        }
        let len = rng.random_range(2..=4usize);
        let mut terms = Vec::with_capacity(len);
        for _ in 0..len {
            let mut u = rng.random_range(0.0..total);
            let mut chosen = &weighted[weighted.len() - 1].0;
            for (term, w) in &weighted {
                if u < *w {
                    chosen = term;
                    break;
                }
                u -= w;
            }
            terms.push(chosen.clone());
        }
        let q = terms.join(" ");
        if seen.insert(q.clone()) {
            out.push(q);
        }
    }
    let insufficient = distinct_terms < 2 || out.len() < k;
    Ok(PseudoQueries { queries: out, insufficient_vocabulary: insufficient })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairConfig {
    /// Passage window length in terms.
    pub passage_len: usize,
    /// Key terms per document.
    pub key_terms: usize,
    /// Pseudo-queries per document.
    pub pseudo_queries: usize,
    pub seed: u64,
}

impl Default for PairConfig {
    fn default() -> Self {
        // Passage length is a guess; nothing pins it upstream.
        Self { passage_len: 64, key_terms: 3, pseudo_queries: 10, seed: 17 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub passage: usize,
    pub key_terms: usize,
    pub pseudo_query: usize,
    pub real_query: usize,
}

impl PairCounts {
    pub fn total(&self) -> usize {
        self.passage + self.key_terms + self.pseudo_query + self.real_query
    }
}

/// Union of all four pair kinds in deterministic order
/// (doc_id, then kind, then window index).
///
/// `docid_map` only needs to witness that every document has an identifier;
/// pairs reference documents by `doc_id`.
pub fn build_training_set<V>(
    corpus: &[Document],
    qrels: &Qrels,
    queries: &[Query],
    docid_map: &BTreeMap<String, V>,
    config: &PairConfig,
) -> Result<(Vec<TrainingPair>, PairCounts), CorpusError> {
    let stats = build_stats(corpus);
    let query_text: BTreeMap<&str, &str> =
        queries.iter().map(|q| (q.query_id.as_str(), q.text.as_str())).collect();

    // Invert qrels once: doc_id -> sorted query_ids judging it relevant.
    let mut doc_queries: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (qid, docs) in &qrels.judgments {
        for (doc_id, &grade) in docs {
            if grade >= 1 {
                doc_queries.entry(doc_id.as_str()).or_default().push(qid.as_str());
            }
        }
    }

    let mut sorted: Vec<&Document> = corpus.iter().collect();
    sorted.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));

    let mut pairs = Vec::new();
    let mut counts = PairCounts::default();
    for doc in sorted {
        if !docid_map.contains_key(&doc.doc_id) {
            return Err(CorpusError::MissingDocId(doc.doc_id.clone()));
        }
        for passage in chunk_passages(doc, config.passage_len)? {
            pairs.push(TrainingPair {
                input_text: passage,
                target_docid_ref: doc.doc_id.clone(),
                kind: PairKind::Passage,
            });
            counts.passage += 1;
        }
        let key_terms = select_key_terms(doc, &stats, config.key_terms);
        if !key_terms.is_empty() {
            pairs.push(TrainingPair {
                input_text: key_terms.join(" "),
                target_docid_ref: doc.doc_id.clone(),
                kind: PairKind::KeyTerms,
            });
            counts.key_terms += 1;
        }
        let pseudo = generate_pseudo_queries(
            doc,
            &stats,
            config.pseudo_queries,
            mix_seed(config.seed, &doc.doc_id),
        )?;
        for q in pseudo.queries {
            pairs.push(TrainingPair {
                input_text: q,
                target_docid_ref: doc.doc_id.clone(),
                kind: PairKind::PseudoQuery,
            });
            counts.pseudo_query += 1;
        }
        if let Some(qids) = doc_queries.get(doc.doc_id.as_str()) {
            for qid in qids {
                let text = query_text
                    .get(qid)
                    .ok_or_else(|| CorpusError::UnknownQuery((*qid).to_string()))?;
                pairs.push(TrainingPair {
                    input_text: (*text).to_string(),
                    target_docid_ref: doc.doc_id.clone(),
                    kind: PairKind::RealQuery,
                });
                counts.real_query += 1;
            }
        }
    }
    Ok((pairs, counts))
}

/// JSON-lines serialization: `{"input": ..., "docid": ..., "kind": ...}`.
pub fn write_training_pairs(path: &Path, pairs: &[TrainingPair]) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in pairs {
        serde_json::to_writer(&mut w, p).map_err(|e| std::io::Error::other(e.to_string()))?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_training_pairs(path: &Path) -> Result<Vec<TrainingPair>, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    let mut pairs = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let pair: TrainingPair =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
                line: idx + 1,
                reason: e.to_string(),
            })?;
        pairs.push(pair);
    }
    Ok(pairs)
}
