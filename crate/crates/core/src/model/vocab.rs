//! Token <-> id bijection over control tokens, corpus text, and docid tokens.
//!
//! One shared namespace: a docid token spelled like a corpus word reuses the
//! word's id (the trie, not the vocabulary, constrains decoding). Tokens that
//! only occur in identifiers — PQ codes, disambiguation suffixes, TU words
//! absent from the text — are appended after the text range, so a PQ scheme
//! grows the vocabulary by exactly `n_groups * k_centers` code tokens plus
//! whatever disambiguation tokens are actually in use.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::corpus::Document;
use crate::docid::{DocId, DocToken};
use crate::text::{fnv1a64, tokenize};

pub const PAD: usize = 0;
pub const EOS: usize = 1;
pub const BOS: usize = 2;
pub const UNK: usize = 3;
pub const NUM_RESERVED: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabData", into = "VocabData")]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    /// Ids holding corpus text tokens: [text_start, docid_start).
    text_start: usize,
    /// Ids holding docid-only tokens: [docid_start, len).
    docid_start: usize,
}

#[derive(Serialize, Deserialize, Clone)]
struct VocabData {
    tokens: Vec<String>,
    text_start: usize,
    docid_start: usize,
}

impl From<VocabData> for Vocab {
    fn from(d: VocabData) -> Self {
        let index = d.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens: d.tokens, index, text_start: d.text_start, docid_start: d.docid_start }
    }
}

impl From<Vocab> for VocabData {
    fn from(v: Vocab) -> Self {
        VocabData { tokens: v.tokens, text_start: v.text_start, docid_start: v.docid_start }
    }
}

impl Vocab {
    /// Build from corpus text (titles + bodies) and a docid map. For the PQ
    /// scheme pass `(n_groups, k_centers)` so every code token is present
    /// even if no document uses it.
    pub fn build(
        corpus: &[Document],
        docid_map: &BTreeMap<String, DocId>,
        pq_dims: Option<(usize, usize)>,
    ) -> Vocab {
        let mut tokens: Vec<String> = vec!["<pad>".into(), "<eos>".into(), "<bos>".into(), "<unk>".into()];
        let mut index: HashMap<String, usize> =
            tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();

        let text_start = tokens.len();
        let mut text_tokens: BTreeSet<String> = BTreeSet::new();
        for doc in corpus {
            text_tokens.extend(tokenize(&doc.title));
            text_tokens.extend(tokenize(&doc.body));
        }
        for t in text_tokens {
            if !index.contains_key(&t) {
                index.insert(t.clone(), tokens.len());
                tokens.push(t);
            }
        }

        let docid_start = tokens.len();
        let push = |tok: String, tokens: &mut Vec<String>, index: &mut HashMap<String, usize>| {
            if !index.contains_key(&tok) {
                index.insert(tok.clone(), tokens.len());
                tokens.push(tok);
            }
        };
        if let Some((n_groups, k_centers)) = pq_dims {
            for g in 0..n_groups {
                for c in 0..k_centers {
                    let tok =
                        DocToken::Pq { group: g as u32, center: c as u32 }.to_string();
                    push(tok, &mut tokens, &mut index);
                }
            }
        }
        let mut docid_tokens: BTreeSet<String> = BTreeSet::new();
        for docid in docid_map.values() {
            for t in &docid.tokens {
                docid_tokens.insert(t.to_string());
            }
        }
        for t in docid_tokens {
            push(t, &mut tokens, &mut index);
        }

        Vocab { tokens, index, text_start, docid_start }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(|s| s.as_str())
    }

    /// Ids appended beyond the text range (PQ codes, disambiguation suffixes,
    /// identifier-only words).
    pub fn docid_only_range(&self) -> std::ops::Range<usize> {
        self.docid_start..self.tokens.len()
    }

    pub fn text_range(&self) -> std::ops::Range<usize> {
        self.text_start..self.docid_start
    }

    /// Tokenize free text; unknown words map to UNK, an empty tokenization
    /// yields a single UNK so the encoder always sees at least one token.
    pub fn encode_text(&self, text: &str) -> Vec<usize> {
        let ids: Vec<usize> =
            tokenize(text).iter().map(|t| self.id(t).unwrap_or(UNK)).collect();
        if ids.is_empty() {
            vec![UNK]
        } else {
            ids
        }
    }

    /// Token ids of a docid, EOS-terminated. Every token must be present.
    pub fn docid_token_ids(&self, docid: &DocId) -> Result<Vec<usize>, ModelError> {
        let mut ids = Vec::with_capacity(docid.tokens.len() + 1);
        for t in &docid.tokens {
            let s = t.to_string();
            ids.push(self.id(&s).ok_or(ModelError::DocTokenMissing(s))?);
        }
        ids.push(EOS);
        Ok(ids)
    }

    /// Stable content hash, used to detect policy/reference vocab mismatches.
    pub fn fingerprint(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for t in &self.tokens {
            h ^= fnv1a64(t.as_bytes());
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}
