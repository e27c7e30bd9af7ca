//! Encoder-decoder wiring, written once and driven by two contexts: a
//! recording context that builds a [`Tape`] for training, and a plain
//! evaluation context for inference. Both delegate to the same tensor
//! kernels, so a value computed either way is bit-identical.

use super::params::{ParamId, ParamSet};
use super::tape::{NodeId, Tape};
use super::tensor::{self, positional_encoding, Tensor};
use crate::num::{s, Scalar};

pub(crate) trait Ctx<F: Scalar> {
    type H: Clone;
    fn config_d(&self) -> usize;
    fn embed(&mut self, ids: &[usize]) -> Self::H;
    fn constant(&mut self, t: Tensor<F>) -> Self::H;
    fn matmul(&mut self, a: &Self::H, b: &Self::H) -> Self::H;
    fn matmul_param(&mut self, a: &Self::H, p: ParamId) -> Self::H;
    fn transpose(&mut self, a: &Self::H) -> Self::H;
    fn add(&mut self, a: &Self::H, b: &Self::H) -> Self::H;
    fn scale(&mut self, a: &Self::H, c: F) -> Self::H;
    fn relu(&mut self, a: &Self::H) -> Self::H;
    fn softmax_rows(&mut self, a: &Self::H, causal: bool) -> Self::H;
    fn log_softmax_rows(&mut self, a: &Self::H) -> Self::H;
}

impl<F: Scalar> Ctx<F> for Tape<'_, F> {
    type H = NodeId;
    fn config_d(&self) -> usize {
        self.params().config.d
    }
    fn embed(&mut self, ids: &[usize]) -> NodeId {
        Tape::embed(self, ids)
    }
    fn constant(&mut self, t: Tensor<F>) -> NodeId {
        Tape::constant(self, t)
    }
    fn matmul(&mut self, a: &NodeId, b: &NodeId) -> NodeId {
        Tape::matmul(self, *a, *b)
    }
    fn matmul_param(&mut self, a: &NodeId, p: ParamId) -> NodeId {
        Tape::matmul_param(self, *a, p)
    }
    fn transpose(&mut self, a: &NodeId) -> NodeId {
        Tape::transpose(self, *a)
    }
    fn add(&mut self, a: &NodeId, b: &NodeId) -> NodeId {
        Tape::add(self, *a, *b)
    }
    fn scale(&mut self, a: &NodeId, c: F) -> NodeId {
        Tape::scale(self, *a, c)
    }
    fn relu(&mut self, a: &NodeId) -> NodeId {
        Tape::relu(self, *a)
    }
    fn softmax_rows(&mut self, a: &NodeId, causal: bool) -> NodeId {
        Tape::softmax_rows(self, *a, causal)
    }
    fn log_softmax_rows(&mut self, a: &NodeId) -> NodeId {
        Tape::log_softmax_rows(self, *a)
    }
}

/// Direct evaluation without recording.
pub(crate) struct EvalCtx<'p, F: Scalar> {
    pub params: &'p ParamSet<F>,
}

impl<F: Scalar> Ctx<F> for EvalCtx<'_, F> {
    type H = Tensor<F>;
    fn config_d(&self) -> usize {
        self.params.config.d
    }
    fn embed(&mut self, ids: &[usize]) -> Tensor<F> {
        let table = self.params.get(ParamId::Embed);
        let mut out = Tensor::zeros(ids.len(), table.cols());
        for (i, &id) in ids.iter().enumerate() {
            out.row_mut(i).copy_from_slice(table.row(id));
        }
        out
    }
    fn constant(&mut self, t: Tensor<F>) -> Tensor<F> {
        t
    }
    fn matmul(&mut self, a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
        tensor::matmul(a, b)
    }
    fn matmul_param(&mut self, a: &Tensor<F>, p: ParamId) -> Tensor<F> {
        tensor::matmul(a, self.params.get(p))
    }
    fn transpose(&mut self, a: &Tensor<F>) -> Tensor<F> {
        a.transpose()
    }
    fn add(&mut self, a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
        tensor::add(a, b)
    }
    fn scale(&mut self, a: &Tensor<F>, c: F) -> Tensor<F> {
        tensor::scale(a, c)
    }
    fn relu(&mut self, a: &Tensor<F>) -> Tensor<F> {
        tensor::relu(a)
    }
    fn softmax_rows(&mut self, a: &Tensor<F>, causal: bool) -> Tensor<F> {
        tensor::softmax_rows(a, causal)
    }
    fn log_softmax_rows(&mut self, a: &Tensor<F>) -> Tensor<F> {
        tensor::log_softmax_rows(a)
    }
}

struct AttnWeights {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
}

const ENC_ATTN: AttnWeights = AttnWeights {
    wq: ParamId::EncWq,
    wk: ParamId::EncWk,
    wv: ParamId::EncWv,
    wo: ParamId::EncWo,
};
const DEC_SELF_ATTN: AttnWeights = AttnWeights {
    wq: ParamId::DecSelfWq,
    wk: ParamId::DecSelfWk,
    wv: ParamId::DecSelfWv,
    wo: ParamId::DecSelfWo,
};
const DEC_CROSS_ATTN: AttnWeights = AttnWeights {
    wq: ParamId::DecCrossWq,
    wk: ParamId::DecCrossWk,
    wv: ParamId::DecCrossWv,
    wo: ParamId::DecCrossWo,
};

/// Single-head scaled dot-product attention with a residual connection.
fn attention<F: Scalar, C: Ctx<F>>(
    ctx: &mut C,
    x: &C::H,
    kv: &C::H,
    w: &AttnWeights,
    causal: bool,
) -> C::H {
    let d = ctx.config_d();
    let q = ctx.matmul_param(x, w.wq);
    let k = ctx.matmul_param(kv, w.wk);
    let v = ctx.matmul_param(kv, w.wv);
    let kt = ctx.transpose(&k);
    let scores = ctx.matmul(&q, &kt);
    let scaled = ctx.scale(&scores, s::<F>(1.0 / (d as f64).sqrt()));
    let attn = ctx.softmax_rows(&scaled, causal);
    let mixed = ctx.matmul(&attn, &v);
    let o = ctx.matmul_param(&mixed, w.wo);
    ctx.add(x, &o)
}

/// Position-wise feed-forward with ReLU and a residual connection.
fn feed_forward<F: Scalar, C: Ctx<F>>(ctx: &mut C, x: &C::H, w1: ParamId, w2: ParamId) -> C::H {
    let h = ctx.matmul_param(x, w1);
    let r = ctx.relu(&h);
    let f = ctx.matmul_param(&r, w2);
    ctx.add(x, &f)
}

fn embed_with_positions<F: Scalar, C: Ctx<F>>(ctx: &mut C, ids: &[usize]) -> C::H {
    let d = ctx.config_d();
    let e = ctx.embed(ids);
    let pos = positional_encoding(ids.len(), d);
    let pos = ctx.constant(pos);
    ctx.add(&e, &pos)
}

/// Encoder: embeddings + positions, self-attention, feed-forward.
pub(crate) fn encode<F: Scalar, C: Ctx<F>>(ctx: &mut C, input_ids: &[usize]) -> C::H {
    let x = embed_with_positions(ctx, input_ids);
    let x = attention(ctx, &x, &x.clone(), &ENC_ATTN, false);
    feed_forward(ctx, &x, ParamId::EncFf1, ParamId::EncFf2)
}

/// Decoder trunk: causal self-attention, cross-attention over the encoder
/// output, feed-forward. Returns hidden states, one row per input position.
pub(crate) fn decode_hidden<F: Scalar, C: Ctx<F>>(
    ctx: &mut C,
    enc: &C::H,
    dec_input_ids: &[usize],
) -> C::H {
    let y = embed_with_positions(ctx, dec_input_ids);
    let y = attention(ctx, &y, &y.clone(), &DEC_SELF_ATTN, true);
    let y = attention(ctx, &y, enc, &DEC_CROSS_ATTN, false);
    feed_forward(ctx, &y, ParamId::DecFf1, ParamId::DecFf2)
}

/// Per-position next-token log-probabilities: rows of
/// log_softmax(hidden . W_out).
pub(crate) fn decode_logprob_rows<F: Scalar, C: Ctx<F>>(
    ctx: &mut C,
    enc: &C::H,
    dec_input_ids: &[usize],
) -> C::H {
    let h = decode_hidden(ctx, enc, dec_input_ids);
    let logits = ctx.matmul_param(&h, ParamId::OutProj);
    ctx.log_softmax_rows(&logits)
}
