//! Miniature autoregressive encoder-decoder over token sequences.
//!
//! One self-attention + feed-forward encoder block, one causal-self +
//! cross-attention + feed-forward decoder block, no layer normalization,
//! ReLU activations, sinusoidal absolute positions. Exact sequence
//! log-likelihoods come from [`sequence_log_prob`]; reverse-mode gradients
//! from the recording [`Tape`].
//!
//! PAD tokens carry no content anywhere in this model: inputs are stripped
//! of PAD before processing, so padded and unpadded encodings of the same
//! sequence are identical by construction.

pub mod checkpoint;
pub(crate) mod forward;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod vocab;

use thiserror::Error;

use crate::num::Scalar;
use forward::EvalCtx;
pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use params::{init_model, ModelConfig, ParamId, ParamSet};
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;
pub use vocab::{Vocab, BOS, EOS, NUM_RESERVED, PAD, UNK};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("token id {token} out of vocabulary (size {vocab_size})")]
    TokenOutOfVocab { token: usize, vocab_size: usize },
    #[error("docid token {0:?} missing from vocabulary")]
    DocTokenMissing(String),
    #[error("sequence length {len} exceeds max_len {max_len}")]
    SequenceTooLong { len: usize, max_len: usize },
    #[error("invalid target sequence: {0}")]
    InvalidTarget(String),
    #[error("tape already consumed by a backward pass")]
    TapeConsumed,
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

fn check_ids(ids: &[usize], vocab_size: usize) -> Result<(), ModelError> {
    for &t in ids {
        if t >= vocab_size {
            return Err(ModelError::TokenOutOfVocab { token: t, vocab_size });
        }
    }
    Ok(())
}

/// Drop PAD tokens; an all-PAD (or empty) input becomes a single UNK so the
/// encoder always has at least one position.
fn strip_pad(ids: &[usize]) -> Vec<usize> {
    let out: Vec<usize> = ids.iter().copied().filter(|&t| t != PAD).collect();
    if out.is_empty() {
        vec![UNK]
    } else {
        out
    }
}

fn prepare_query(ids: &[usize], config: &ModelConfig) -> Result<Vec<usize>, ModelError> {
    check_ids(ids, config.vocab_size)?;
    let q = strip_pad(ids);
    if q.len() > config.max_len {
        return Err(ModelError::SequenceTooLong { len: q.len(), max_len: config.max_len });
    }
    Ok(q)
}

/// A docid sequence is the decoder target: non-empty, EOS-terminated, no
/// control tokens elsewhere.
fn check_target(docid: &[usize], config: &ModelConfig) -> Result<(), ModelError> {
    check_ids(docid, config.vocab_size)?;
    if docid.is_empty() {
        return Err(ModelError::InvalidTarget("empty docid".into()));
    }
    if *docid.last().unwrap() != EOS {
        return Err(ModelError::InvalidTarget("docid must end with EOS".into()));
    }
    if docid[..docid.len() - 1].iter().any(|&t| t == EOS || t == PAD || t == BOS) {
        return Err(ModelError::InvalidTarget("control token inside docid".into()));
    }
    if docid.len() > config.max_len {
        return Err(ModelError::SequenceTooLong { len: docid.len(), max_len: config.max_len });
    }
    Ok(())
}

/// Teacher-forced decoder input: BOS followed by all target tokens but the
/// last (position i predicts target i).
fn decoder_input(docid: &[usize]) -> Vec<usize> {
    let mut input = Vec::with_capacity(docid.len());
    input.push(BOS);
    input.extend_from_slice(&docid[..docid.len() - 1]);
    input
}

/// Sum over target positions of log p(docid_i | docid_{<i}, query), the EOS
/// step included. Always <= 0.
pub fn sequence_log_prob<F: Scalar>(
    params: &ParamSet<F>,
    query: &[usize],
    docid: &[usize],
) -> Result<F, ModelError> {
    let q = prepare_query(query, &params.config)?;
    check_target(docid, &params.config)?;
    let mut ctx = EvalCtx { params };
    let enc = forward::encode(&mut ctx, &q);
    let lp = forward::decode_logprob_rows(&mut ctx, &enc, &decoder_input(docid));
    Ok(docid.iter().enumerate().map(|(i, &t)| lp.get(i, t)).sum())
}

/// Record the sequence log-prob as a tape node (for gradient work). Returns
/// the scalar node id.
pub fn seq_log_prob_node<F: Scalar>(
    tape: &mut Tape<'_, F>,
    query: &[usize],
    docid: &[usize],
) -> Result<NodeId, ModelError> {
    let enc = encode_node(tape, query)?;
    seq_log_prob_node_with_enc(tape, enc, docid)
}

/// Encode a query on the tape; reusable across multiple decoder targets.
pub fn encode_node<F: Scalar>(
    tape: &mut Tape<'_, F>,
    query: &[usize],
) -> Result<NodeId, ModelError> {
    let q = prepare_query(query, &tape.params().config)?;
    Ok(forward::encode(tape, &q))
}

/// Sequence log-prob node reusing an already-encoded query.
pub fn seq_log_prob_node_with_enc<F: Scalar>(
    tape: &mut Tape<'_, F>,
    enc: NodeId,
    docid: &[usize],
) -> Result<NodeId, ModelError> {
    check_target(docid, &tape.params().config)?;
    let lp = forward::decode_logprob_rows(tape, &enc, &decoder_input(docid));
    let coords = docid.iter().enumerate().map(|(i, &t)| (i, t)).collect();
    Ok(tape.gather_sum(lp, coords))
}

/// Forward + backward in one call: accumulates `scale * d(log p)/d(theta)`
/// into `grads` and returns the log-prob.
pub fn sequence_log_prob_grad<F: Scalar>(
    params: &ParamSet<F>,
    query: &[usize],
    docid: &[usize],
    scale: F,
    grads: &mut ParamSet<F>,
) -> Result<F, ModelError> {
    let mut tape = Tape::new(params);
    let node = seq_log_prob_node(&mut tape, query, docid)?;
    let value = tape.scalar(node);
    tape.backward(node, scale, grads)?;
    Ok(value)
}

/// Encoder output cached for repeated decoding against one query.
pub struct EncodedQuery<F: Scalar> {
    enc: Tensor<F>,
}

pub fn encode_query<F: Scalar>(
    params: &ParamSet<F>,
    query: &[usize],
) -> Result<EncodedQuery<F>, ModelError> {
    let q = prepare_query(query, &params.config)?;
    let mut ctx = EvalCtx { params };
    Ok(EncodedQuery { enc: forward::encode(&mut ctx, &q) })
}

/// Log-probability vector over the full vocabulary for the next token after
/// `prefix`. logsumexp of the result is 0 (softmax identity).
pub fn next_token_logprobs_cached<F: Scalar>(
    params: &ParamSet<F>,
    encoded: &EncodedQuery<F>,
    prefix: &[usize],
) -> Result<Vec<F>, ModelError> {
    let config = &params.config;
    check_ids(prefix, config.vocab_size)?;
    let mut input = Vec::with_capacity(prefix.len() + 1);
    input.push(BOS);
    input.extend_from_slice(prefix);
    if input.len() > config.max_len {
        return Err(ModelError::SequenceTooLong { len: input.len(), max_len: config.max_len });
    }
    let mut ctx = EvalCtx { params };
    let hidden = forward::decode_hidden(&mut ctx, &encoded.enc, &input);
    // Only the last position matters for the next token; computing one row of
    // the output projection keeps beam search cheap and is bit-identical to
    // the corresponding row of the full matrix product.
    let last = hidden.row_tensor(hidden.rows() - 1);
    let logits = tensor::matmul(&last, params.get(ParamId::OutProj));
    let lp = tensor::log_softmax_rows(&logits);
    Ok(lp.row(0).to_vec())
}

pub fn next_token_logprobs<F: Scalar>(
    params: &ParamSet<F>,
    query: &[usize],
    prefix: &[usize],
) -> Result<Vec<F>, ModelError> {
    let encoded = encode_query(params, query)?;
    next_token_logprobs_cached(params, &encoded, prefix)
}

/// Immutable snapshot of a trained model and its vocabulary; the anchor for
/// preference optimization. No mutating accessors exist.
#[derive(Debug, Clone)]
pub struct FrozenPolicy<F: Scalar> {
    params: ParamSet<F>,
    vocab: Vocab,
}

impl<F: Scalar> FrozenPolicy<F> {
    pub fn new(params: ParamSet<F>, vocab: Vocab) -> Self {
        FrozenPolicy { params, vocab }
    }

    pub fn params(&self) -> &ParamSet<F> {
        &self.params
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn sequence_log_prob(&self, query: &[usize], docid: &[usize]) -> Result<F, ModelError> {
        sequence_log_prob(&self.params, query, docid)
    }
}
