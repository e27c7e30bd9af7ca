//! BM25 inverted index and stratified hard-negative mining.
//!
//! Backs two things: the term-based baseline run, and the preference pairs
//! that drive pairwise ranking optimization (negatives drawn from rank bands
//! of a BM25 run, positives from the relevance judgments).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{build_stats, CorpusStats, Document, Qrels};
use crate::text::{mix_seed, tokenize};

#[derive(Debug, Error)]
pub enum LexicalError {
    #[error("cannot index an empty corpus")]
    EmptyCorpus,
    #[error("doc_id {0:?} not indexed")]
    UnknownDoc(String),
    #[error("query {0:?} has no relevant document in qrels")]
    NoRelevantDoc(String),
    #[error("query {0:?} has no non-relevant candidates to sample")]
    EmptyCandidatePool(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
}

/// Default BM25 parameters (conventional toolkit defaults).
pub const DEFAULT_K1: f64 = 0.9;
pub const DEFAULT_B: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvertedIndex {
    /// term -> postings sorted by doc_id.
    pub postings: BTreeMap<String, Vec<(String, u32)>>,
    pub doc_lens: BTreeMap<String, usize>,
    pub stats: CorpusStats,
}

pub fn build_index(corpus: &[Document]) -> Result<InvertedIndex, LexicalError> {
    if corpus.is_empty() {
        return Err(LexicalError::EmptyCorpus);
    }
    let mut postings: BTreeMap<String, Vec<(String, u32)>> = BTreeMap::new();
    let mut doc_lens = BTreeMap::new();
    for doc in corpus {
        let terms = tokenize(&doc.body);
        doc_lens.insert(doc.doc_id.clone(), terms.len());
        let mut tf: BTreeMap<String, u32> = BTreeMap::new();
        for t in terms {
            *tf.entry(t).or_insert(0) += 1;
        }
        for (term, count) in tf {
            postings.entry(term).or_default().push((doc.doc_id.clone(), count));
        }
    }
    for list in postings.values_mut() {
        list.sort_by(|a, b| a.0.cmp(&b.0));
    }
    Ok(InvertedIndex { postings, doc_lens, stats: build_stats(corpus) })
}

impl InvertedIndex {
    fn idf(&self, term: &str) -> f64 {
        let n = self.stats.num_docs as f64;
        let df = self.stats.df(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn tf_in(&self, term: &str, doc_id: &str) -> u32 {
        self.postings
            .get(term)
            .and_then(|list| {
                list.binary_search_by(|(d, _)| d.as_str().cmp(doc_id)).ok().map(|i| list[i].1)
            })
            .unwrap_or(0)
    }
}

/// BM25 score of one document for a term multiset. Query terms are counted
/// per occurrence; terms absent from the document contribute zero.
pub fn bm25_score(
    query_terms: &[String],
    doc_id: &str,
    index: &InvertedIndex,
    k1: f64,
    b: f64,
) -> Result<f64, LexicalError> {
    let dl = *index.doc_lens.get(doc_id).ok_or_else(|| LexicalError::UnknownDoc(doc_id.into()))?
        as f64;
    let avgdl = index.stats.avg_doc_len;
    let mut score = 0.0;
    for term in query_terms {
        let tf = index.tf_in(term, doc_id) as f64;
        if tf == 0.0 {
            continue;
        }
        let norm = tf + k1 * (1.0 - b + b * dl / avgdl);
        score += index.idf(term) * tf * (k1 + 1.0) / norm;
    }
    Ok(score)
}

/// Top-K documents by BM25, descending score, ties broken by doc_id
/// ascending. Only documents matching at least one query term appear.
pub fn top_k(
    query: &str,
    index: &InvertedIndex,
    cap: usize,
    k1: f64,
    b: f64,
) -> Vec<(String, f64)> {
    let terms = tokenize(query);
    let avgdl = index.stats.avg_doc_len;
    let mut scores: BTreeMap<&str, f64> = BTreeMap::new();
    for term in &terms {
        let Some(list) = index.postings.get(term) else { continue };
        let idf = index.idf(term);
        for (doc_id, tf) in list {
            let tf = *tf as f64;
            let dl = index.doc_lens[doc_id] as f64;
            let norm = tf + k1 * (1.0 - b + b * dl / avgdl);
            *scores.entry(doc_id.as_str()).or_insert(0.0) += idf * tf * (k1 + 1.0) / norm;
        }
    }
    let mut ranked: Vec<(String, f64)> = scores
        .into_iter()
        .filter(|(_, s)| *s > 0.0)
        .map(|(d, s)| (d.to_string(), s))
        .collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite scores").then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(cap);
    ranked
}

/// Rank band a negative was drawn from: 1-100, 101-500, or 501-1000.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stratum {
    Top,
    Mid,
    Low,
}

pub const STRATUM_BOUNDS: [(usize, usize); 3] = [(1, 100), (101, 500), (501, 1000)];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub query_id: String,
    #[serde(rename = "pos")]
    pub positive: String,
    #[serde(rename = "neg")]
    pub negative: String,
    #[serde(rename = "stratum")]
    pub negative_stratum: Stratum,
}

/// Even split of `per_query` over the three strata, remainder going to Top
/// first, then Mid.
pub fn stratum_quotas(per_query: usize) -> [usize; 3] {
    let base = per_query / 3;
    let rem = per_query % 3;
    [base + usize::from(rem >= 1), base + usize::from(rem >= 2), base]
}

/// Stratified negatives for one query over its ranked BM25 list.
///
/// Judged-relevant documents are excluded. When a stratum cannot fill its
/// quota the deficit spills to the next stratum down, then back up. Each
/// negative is paired with a uniformly drawn relevant positive.
pub fn sample_negatives(
    ranked: &[(String, f64)],
    qrels: &Qrels,
    query_id: &str,
    per_query: usize,
    seed: u64,
) -> Result<Vec<PreferencePair>, LexicalError> {
    let positives: Vec<&str> = qrels.relevant_docs(query_id);
    if positives.is_empty() {
        return Err(LexicalError::NoRelevantDoc(query_id.into()));
    }

    let mut pools: [Vec<&str>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (i, (doc_id, _)) in ranked.iter().enumerate() {
        let rank = i + 1;
        if qrels.is_relevant(query_id, doc_id) {
            continue;
        }
        for (s, (lo, hi)) in STRATUM_BOUNDS.iter().enumerate() {
            if rank >= *lo && rank <= *hi {
                pools[s].push(doc_id.as_str());
            }
        }
    }
    if pools.iter().all(|p| p.is_empty()) {
        return Err(LexicalError::EmptyCandidatePool(query_id.into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, query_id));
    let quotas = stratum_quotas(per_query);
    let mut take = [0usize; 3];
    // Downward pass with carry, then the remaining deficit walks back up.
    let mut carry = 0usize;
    for s in 0..3 {
        let want = quotas[s] + carry;
        take[s] = want.min(pools[s].len());
        carry = want - take[s];
    }
    for s in (0..3).rev() {
        if carry == 0 {
            break;
        }
        let extra = carry.min(pools[s].len() - take[s]);
        take[s] += extra;
        carry -= extra;
    }

    let strata = [Stratum::Top, Stratum::Mid, Stratum::Low];
    let mut out = Vec::new();
    for s in 0..3 {
        let mut pool = pools[s].clone();
        pool.partial_shuffle(&mut rng, take[s]);
        for neg in pool.iter().take(take[s]) {
            let pos = positives[rng.random_range(0..positives.len())];
            out.push(PreferencePair {
                query_id: query_id.to_string(),
                positive: pos.to_string(),
                negative: (*neg).to_string(),
                negative_stratum: strata[s],
            });
        }
    }
    Ok(out)
}

/// JSON-lines: `{"query_id": ..., "pos": ..., "neg": ..., "stratum": ...}`.
pub fn write_preference_pairs(path: &Path, pairs: &[PreferencePair]) -> Result<(), LexicalError> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in pairs {
        serde_json::to_writer(&mut w, p).map_err(|e| std::io::Error::other(e.to_string()))?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_preference_pairs(path: &Path) -> Result<Vec<PreferencePair>, LexicalError> {
    let reader = BufReader::new(File::open(path)?);
    let mut pairs = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        pairs.push(serde_json::from_str(&line).map_err(|e| LexicalError::MalformedRecord {
            line: idx + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn doc(id: &str, body: &str) -> Document {
        Document { doc_id: id.into(), url: None, title: "t".into(), body: body.into() }
    }

    #[test]
    fn index_postings_sorted_and_totals() {
        let corpus = vec![doc("d2", "a b"), doc("d1", "a a a")];
        let idx = build_index(&corpus).unwrap();
        let a = &idx.postings["a"];
        assert_eq!(a, &vec![("d1".to_string(), 3), ("d2".to_string(), 1)]);
        assert!(idx.postings.get("zzz").is_none());
        let len_sum: usize = idx.doc_lens.values().sum();
        assert_eq!(len_sum, idx.stats.total_terms);
        assert!(matches!(build_index(&[]), Err(LexicalError::EmptyCorpus)));
    }

    // Independent formula evaluation on the 2-doc corpus:
    // idf(a) = ln(1.2) ~= 0.18232; d1 ~= 0.18950.
    #[test]
    fn bm25_frozen_example() {
        let corpus = vec![doc("d1", "a b"), doc("d2", "a a a")];
        let idx = build_index(&corpus).unwrap();
        let q = vec!["a".to_string()];
        let d1 = bm25_score(&q, "d1", &idx, 0.9, 0.4).unwrap();
        assert_abs_diff_eq!(d1, 0.18950271220378215, epsilon = 1e-12);
        let d2 = bm25_score(&q, "d2", &idx, 0.9, 0.4).unwrap();
        assert_abs_diff_eq!(d2, 0.26163969630552397, epsilon = 1e-12);
    }

    #[test]
    fn bm25_unknown_terms_and_docs() {
        let corpus = vec![doc("d1", "a b")];
        let idx = build_index(&corpus).unwrap();
        let zero = bm25_score(&["zzz".to_string()], "d1", &idx, 0.9, 0.4).unwrap();
        assert_eq!(zero, 0.0);
        assert!(matches!(
            bm25_score(&["a".to_string()], "nope", &idx, 0.9, 0.4),
            Err(LexicalError::UnknownDoc(_))
        ));
    }

    #[test]
    fn bm25_duplicate_query_terms_accumulate() {
        let corpus = vec![doc("d1", "a b"), doc("d2", "c")];
        let idx = build_index(&corpus).unwrap();
        let once = bm25_score(&["a".into()], "d1", &idx, 0.9, 0.4).unwrap();
        let twice = bm25_score(&["a".into(), "a".into()], "d1", &idx, 0.9, 0.4).unwrap();
        assert_abs_diff_eq!(twice, 2.0 * once, epsilon = 1e-12);
    }

    #[test]
    fn bm25_insertion_order_invariant() {
        let a = vec![doc("d1", "x y z"), doc("d2", "x q"), doc("d3", "y y")];
        let mut b = a.clone();
        b.reverse();
        let ia = build_index(&a).unwrap();
        let ib = build_index(&b).unwrap();
        assert_eq!(ia, ib);
        for d in ["d1", "d2", "d3"] {
            let qa = bm25_score(&["x".into(), "y".into()], d, &ia, 0.9, 0.4).unwrap();
            let qb = bm25_score(&["x".into(), "y".into()], d, &ib, 0.9, 0.4).unwrap();
            assert_eq!(qa, qb);
        }
    }

    #[test]
    fn top_k_matches_exhaustive_scoring() {
        // Brute-force oracle: score every document directly.
        let corpus: Vec<Document> = (0..30)
            .map(|i| doc(&format!("d{i:02}"), &format!("w{} w{} w{} common", i % 7, i % 3, i % 5)))
            .collect();
        let idx = build_index(&corpus).unwrap();
        for query in ["w1 w2", "common w4", "w6", "absent"] {
            let ranked = top_k(query, &idx, 1000, 0.9, 0.4);
            let terms = tokenize(query);
            let mut oracle: Vec<(String, f64)> = corpus
                .iter()
                .map(|d| {
                    (d.doc_id.clone(), bm25_score(&terms, &d.doc_id, &idx, 0.9, 0.4).unwrap())
                })
                .filter(|(_, s)| *s > 0.0)
                .collect();
            oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
            assert_eq!(ranked.len(), oracle.len(), "query {query}");
            for ((d1, s1), (d2, s2)) in ranked.iter().zip(&oracle) {
                assert_eq!(d1, d2);
                assert_abs_diff_eq!(*s1, *s2, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn top_k_all_zero_scores_empty() {
        let corpus = vec![doc("d1", "a"), doc("d2", "b")];
        let idx = build_index(&corpus).unwrap();
        assert!(top_k("zzz yyy", &idx, 10, 0.9, 0.4).is_empty());
        assert_eq!(top_k("a b", &idx, 1, 0.9, 0.4).len(), 1);
    }

    #[test]
    fn quotas_match_reference_values() {
        assert_eq!(stratum_quotas(16), [6, 5, 5]);
        assert_eq!(stratum_quotas(8), [3, 3, 2]);
        assert_eq!(stratum_quotas(6), [2, 2, 2]);
        assert_eq!(stratum_quotas(1), [1, 0, 0]);
    }

    fn ranked_list(n: usize) -> Vec<(String, f64)> {
        (0..n).map(|i| (format!("d{i:04}"), 1000.0 - i as f64)).collect()
    }

    #[test]
    fn negatives_full_strata() {
        let ranked = ranked_list(1000);
        let mut qrels = Qrels::default();
        qrels.insert("q1", "relpos", 1);
        let pairs = sample_negatives(&ranked, &qrels, "q1", 16, 7).unwrap();
        assert_eq!(pairs.len(), 16);
        let top = pairs.iter().filter(|p| p.negative_stratum == Stratum::Top).count();
        let mid = pairs.iter().filter(|p| p.negative_stratum == Stratum::Mid).count();
        let low = pairs.iter().filter(|p| p.negative_stratum == Stratum::Low).count();
        assert_eq!((top, mid, low), (6, 5, 5));
        for p in &pairs {
            assert_eq!(p.positive, "relpos");
            assert!(!qrels.is_relevant("q1", &p.negative));
        }
        // Determinism.
        assert_eq!(pairs, sample_negatives(&ranked, &qrels, "q1", 16, 7).unwrap());
    }

    #[test]
    fn negatives_short_list_spills_upward() {
        // 120 ranked docs: Low band empty, Mid band has ranks 101-120.
        let ranked = ranked_list(120);
        let mut qrels = Qrels::default();
        qrels.insert("q1", "relpos", 1);
        let pairs = sample_negatives(&ranked, &qrels, "q1", 6, 3).unwrap();
        assert_eq!(pairs.len(), 6);
        assert!(pairs.iter().all(|p| p.negative_stratum != Stratum::Low));
        let mid: Vec<_> = pairs.iter().filter(|p| p.negative_stratum == Stratum::Mid).collect();
        for p in &mid {
            let rank = ranked.iter().position(|(d, _)| d == &p.negative).unwrap() + 1;
            assert!((101..=120).contains(&rank));
        }
    }

    #[test]
    fn negatives_exclude_relevant_and_error_paths() {
        let ranked = ranked_list(50);
        let mut qrels = Qrels::default();
        // Every ranked doc is relevant: pool is empty.
        for (d, _) in &ranked {
            qrels.insert("q1", d, 1);
        }
        assert!(matches!(
            sample_negatives(&ranked, &qrels, "q1", 4, 1),
            Err(LexicalError::EmptyCandidatePool(_))
        ));
        assert!(matches!(
            sample_negatives(&ranked, &Qrels::default(), "q2", 4, 1),
            Err(LexicalError::NoRelevantDoc(_))
        ));
    }

    #[test]
    fn negatives_never_relevant_over_seeds() {
        let ranked = ranked_list(300);
        let mut qrels = Qrels::default();
        qrels.insert("q1", "d0003", 1);
        qrels.insert("q1", "d0150", 1);
        qrels.insert("q1", "relout", 1);
        for seed in 0..100u64 {
            let pairs = sample_negatives(&ranked, &qrels, "q1", 8, seed).unwrap();
            assert_eq!(pairs.len(), 8);
            for p in &pairs {
                assert!(!qrels.is_relevant("q1", &p.negative), "seed {seed}");
                assert!(qrels.is_relevant("q1", &p.positive));
                assert_ne!(p.positive, p.negative);
            }
        }
    }

    #[test]
    fn preference_pairs_jsonl_roundtrip() {
        let pairs = vec![PreferencePair {
            query_id: "q1".into(),
            positive: "d1".into(),
            negative: "d9".into(),
            negative_stratum: Stratum::Mid,
        }];
        let f = tempfile::NamedTempFile::new().unwrap();
        write_preference_pairs(f.path(), &pairs).unwrap();
        assert_eq!(read_preference_pairs(f.path()).unwrap(), pairs);
        let raw = std::fs::read_to_string(f.path()).unwrap();
        assert!(raw.contains("\"stratum\":\"mid\""));
    }
}
