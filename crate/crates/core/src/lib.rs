//! Desk-scale generative retrieval with direct document relevance optimization.
//!
//! The pipeline: build document identifiers ([`docid`]), synthesize training
//! pairs ([`corpus`], [`lexical`]), train a small encoder-decoder with SFT and
//! a DPO-style pairwise objective ([`model`], [`train`]), decode with
//! trie-constrained beam search ([`decode`]), and evaluate with standard IR
//! metrics ([`eval`]). [`synth`] generates deterministic corpora so the whole
//! pipeline runs end to end without external datasets.
//!
//! Numeric code is generic over [`num::Scalar`]; the shipped pipeline uses
//! [`Real`] (`f64`) throughout because gradient checks demand it.

pub mod corpus;
pub mod decode;
pub mod docid;
pub mod eval;
pub mod lexical;
pub mod model;
pub mod num;
pub mod synth;
pub mod text;
pub mod train;

/// Scalar used by the shipped pipeline and CLI.
pub type Real = f64;

// Aliases for the model/train types land once those modules exist.
// pub type RealParams = model::ParamSet<Real>;
// pub type RealPolicy = model::FrozenPolicy<Real>;
