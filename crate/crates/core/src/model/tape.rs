//! Reverse-mode automatic differentiation over recorded tensor operations.
//!
//! A [`Tape`] borrows the parameter set, records every primitive applied
//! during a forward pass together with its activation, and replays the
//! recording backward exactly once, accumulating parameter gradients into a
//! caller-supplied [`ParamSet`]. Parameters are referenced by id rather than
//! copied onto the tape.

use super::params::{ParamId, ParamSet};
use super::tensor::{self, Tensor};
use super::ModelError;
use crate::num::Scalar;

/// Handle to a node on the tape.
pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op<F> {
    /// Constant input; contributes no gradient.
    Const,
    /// Rows of the embedding matrix selected by token id.
    Embed { ids: Vec<usize> },
    /// C = A . B for two tape nodes.
    MatMul { a: NodeId, b: NodeId },
    /// C = A . P for a tape node and a parameter matrix.
    MatMulParam { a: NodeId, p: ParamId },
    Transpose { a: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Scale { a: NodeId, c: F },
    Relu { a: NodeId },
    Softplus { a: NodeId },
    /// Row-wise softmax; with `causal` entries right of the diagonal are
    /// masked to exactly zero.
    SoftmaxRows { a: NodeId, causal: bool },
    LogSoftmaxRows { a: NodeId },
    /// Sum of selected entries, a 1x1 result.
    GatherSum { a: NodeId, coords: Vec<(usize, usize)> },
}

struct Node<F> {
    op: Op<F>,
    value: Tensor<F>,
}

pub struct Tape<'p, F: Scalar> {
    params: &'p ParamSet<F>,
    nodes: Vec<Node<F>>,
    consumed: bool,
}

impl<'p, F: Scalar> Tape<'p, F> {
    pub fn new(params: &'p ParamSet<F>) -> Self {
        Tape { params, nodes: Vec::new(), consumed: false }
    }

    pub fn params(&self) -> &'p ParamSet<F> {
        self.params
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id].value
    }

    /// Value of a 1x1 node.
    pub fn scalar(&self, id: NodeId) -> F {
        debug_assert_eq!(self.nodes[id].value.shape(), (1, 1));
        self.nodes[id].value.get(0, 0)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<F>, value: Tensor<F>) -> NodeId {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    pub fn constant(&mut self, t: Tensor<F>) -> NodeId {
        self.push(Op::Const, t)
    }

    pub fn embed(&mut self, ids: &[usize]) -> NodeId {
        let table = self.params.get(ParamId::Embed);
        let d = table.cols();
        let mut out = Tensor::zeros(ids.len(), d);
        for (i, &id) in ids.iter().enumerate() {
            out.row_mut(i).copy_from_slice(table.row(id));
        }
        self.push(Op::Embed { ids: ids.to_vec() }, out)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = tensor::matmul(&self.nodes[a].value, &self.nodes[b].value);
        self.push(Op::MatMul { a, b }, value)
    }

    pub fn matmul_param(&mut self, a: NodeId, p: ParamId) -> NodeId {
        let value = tensor::matmul(&self.nodes[a].value, self.params.get(p));
        self.push(Op::MatMulParam { a, p }, value)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.transpose();
        self.push(Op::Transpose { a }, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = tensor::add(&self.nodes[a].value, &self.nodes[b].value);
        self.push(Op::Add { a, b }, value)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = tensor::sub(&self.nodes[a].value, &self.nodes[b].value);
        self.push(Op::Sub { a, b }, value)
    }

    pub fn scale(&mut self, a: NodeId, c: F) -> NodeId {
        let value = tensor::scale(&self.nodes[a].value, c);
        self.push(Op::Scale { a, c }, value)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = tensor::relu(&self.nodes[a].value);
        self.push(Op::Relu { a }, value)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let value = tensor::softplus(&self.nodes[a].value);
        self.push(Op::Softplus { a }, value)
    }

    pub fn softmax_rows(&mut self, a: NodeId, causal: bool) -> NodeId {
        let value = tensor::softmax_rows(&self.nodes[a].value, causal);
        self.push(Op::SoftmaxRows { a, causal }, value)
    }

    pub fn log_softmax_rows(&mut self, a: NodeId) -> NodeId {
        let value = tensor::log_softmax_rows(&self.nodes[a].value);
        self.push(Op::LogSoftmaxRows { a }, value)
    }

    pub fn gather_sum(&mut self, a: NodeId, coords: Vec<(usize, usize)>) -> NodeId {
        let src = &self.nodes[a].value;
        let mut acc = F::zero();
        for &(r, c) in &coords {
            acc += src.get(r, c);
        }
        let value = Tensor::from_vec(1, 1, vec![acc]);
        self.push(Op::GatherSum { a, coords }, value)
    }

    /// Reverse pass from a 1x1 `root` node, seeding its gradient with
    /// `upstream`. Parameter gradients accumulate into `grads`; the tape can
    /// run backward only once.
    pub fn backward(
        &mut self,
        root: NodeId,
        upstream: F,
        grads: &mut ParamSet<F>,
    ) -> Result<(), ModelError> {
        if self.consumed {
            return Err(ModelError::TapeConsumed);
        }
        self.consumed = true;
        debug_assert_eq!(self.nodes[root].value.shape(), (1, 1), "backward root must be scalar");

        let mut adjoints: Vec<Option<Tensor<F>>> = vec![None; self.nodes.len()];
        adjoints[root] = Some(Tensor::from_vec(1, 1, vec![upstream]));

        for i in (0..=root).rev() {
            let Some(dy) = adjoints[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Const => {}
                Op::Embed { ids } => {
                    let table = grads.get_mut(ParamId::Embed);
                    for (row, &id) in ids.iter().enumerate() {
                        for (g, &u) in table.row_mut(id).iter_mut().zip(dy.row(row)) {
                            *g += u;
                        }
                    }
                }
                Op::MatMul { a, b } => {
                    let (a, b) = (*a, *b);
                    let da = tensor::matmul_nt(&dy, &self.nodes[b].value);
                    let db = tensor::matmul_tn(&self.nodes[a].value, &dy);
                    accumulate(&mut adjoints[a], da);
                    accumulate(&mut adjoints[b], db);
                }
                Op::MatMulParam { a, p } => {
                    let (a, p) = (*a, *p);
                    let da = tensor::matmul_nt(&dy, self.params.get(p));
                    let dp = tensor::matmul_tn(&self.nodes[a].value, &dy);
                    accumulate(&mut adjoints[a], da);
                    grads.get_mut(p).add_scaled(&dp, F::one());
                }
                Op::Transpose { a } => {
                    let a = *a;
                    accumulate(&mut adjoints[a], dy.transpose());
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    accumulate(&mut adjoints[a], dy.clone());
                    accumulate(&mut adjoints[b], dy);
                }
                Op::Sub { a, b } => {
                    let (a, b) = (*a, *b);
                    accumulate(&mut adjoints[a], dy.clone());
                    accumulate(&mut adjoints[b], tensor::scale(&dy, -F::one()));
                }
                Op::Scale { a, c } => {
                    let (a, c) = (*a, *c);
                    accumulate(&mut adjoints[a], tensor::scale(&dy, c));
                }
                Op::Relu { a } => {
                    let a = *a;
                    let x = &self.nodes[a].value;
                    let mut dx = dy;
                    for (g, &xi) in dx.data_mut().iter_mut().zip(x.data()) {
                        if xi <= F::zero() {
                            *g = F::zero();
                        }
                    }
                    accumulate(&mut adjoints[a], dx);
                }
                Op::Softplus { a } => {
                    let a = *a;
                    let x = &self.nodes[a].value;
                    let mut dx = dy;
                    for (g, &xi) in dx.data_mut().iter_mut().zip(x.data()) {
                        *g *= tensor::sigmoid(xi);
                    }
                    accumulate(&mut adjoints[a], dx);
                }
                Op::SoftmaxRows { a, .. } => {
                    // dx = y * (dy - <dy, y>) per row; masked entries have
                    // y = 0 and drop out on their own.
                    let a = *a;
                    let y = &self.nodes[i].value;
                    let mut dx = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let dyr = dy.row(r);
                        let dot =
                            yr.iter().zip(dyr).map(|(&yi, &gi)| yi * gi).sum::<F>();
                        for ((o, &yi), &gi) in dx.row_mut(r).iter_mut().zip(yr).zip(dyr) {
                            *o = yi * (gi - dot);
                        }
                    }
                    accumulate(&mut adjoints[a], dx);
                }
                Op::LogSoftmaxRows { a } => {
                    // dx = dy - exp(y) * sum(dy) per row.
                    let a = *a;
                    let y = &self.nodes[i].value;
                    let mut dx = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let dyr = dy.row(r);
                        let total = dyr.iter().cloned().sum::<F>();
                        for ((o, &yi), &gi) in dx.row_mut(r).iter_mut().zip(y.row(r)).zip(dyr) {
                            *o = gi - yi.exp() * total;
                        }
                    }
                    accumulate(&mut adjoints[a], dx);
                }
                Op::GatherSum { a, coords } => {
                    let a = *a;
                    let u = dy.get(0, 0);
                    let shape = self.nodes[a].value.shape();
                    let mut dx = Tensor::zeros(shape.0, shape.1);
                    for &(r, c) in coords {
                        let cur = dx.get(r, c);
                        dx.set(r, c, cur + u);
                    }
                    accumulate(&mut adjoints[a], dx);
                }
            }
        }
        Ok(())
    }
}

fn accumulate<F: Scalar>(slot: &mut Option<Tensor<F>>, grad: Tensor<F>) {
    match slot {
        Some(existing) => existing.add_scaled(&grad, F::one()),
        None => *slot = Some(grad),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::{init_model, ModelConfig};
    use approx::assert_abs_diff_eq;

    fn cfg() -> ModelConfig {
        ModelConfig { d: 8, vocab_size: 16, max_len: 32 }
    }

    #[test]
    fn backward_runs_once() {
        let params = init_model::<f64>(cfg(), 1).unwrap();
        let mut tape = Tape::new(&params);
        let x = tape.embed(&[4, 5]);
        let s = tape.gather_sum(x, vec![(0, 0), (1, 3)]);
        let mut grads = ParamSet::zeros_like(&params);
        tape.backward(s, 1.0, &mut grads).unwrap();
        assert!(matches!(tape.backward(s, 1.0, &mut grads), Err(ModelError::TapeConsumed)));
    }

    #[test]
    fn constant_gets_no_gradient() {
        let params = init_model::<f64>(cfg(), 2).unwrap();
        let mut tape = Tape::new(&params);
        let c = tape.constant(Tensor::from_vec(1, 2, vec![3.0, 4.0]));
        let s = tape.gather_sum(c, vec![(0, 0), (0, 1)]);
        let mut grads = ParamSet::zeros_like(&params);
        tape.backward(s, 1.0, &mut grads).unwrap();
        assert_eq!(grads.max_abs(), 0.0);
        assert_eq!(tape.scalar(s), 7.0);
    }

    #[test]
    fn linearity_of_backward() {
        // backward of a*f has gradients a * (backward of f).
        let params = init_model::<f64>(cfg(), 3).unwrap();
        let run = |scale_const: Option<f64>, upstream: f64| {
            let mut tape = Tape::new(&params);
            let x = tape.embed(&[1, 2, 3]);
            let h = tape.matmul_param(x, ParamId::EncWq);
            let r = tape.relu(h);
            let mut out = tape.gather_sum(r, vec![(0, 0), (2, 5)]);
            if let Some(c) = scale_const {
                out = tape.scale(out, c);
            }
            let mut grads = ParamSet::zeros_like(&params);
            tape.backward(out, upstream, &mut grads).unwrap();
            grads
        };
        let base = run(None, 1.0);
        let scaled = run(Some(2.5), 1.0);
        let upstream = run(None, 2.5);
        for ((_, g1), ((_, g2), (_, g3))) in
            base.tensors().zip(scaled.tensors().zip(upstream.tensors()))
        {
            for ((a, b), c) in g1.data().iter().zip(g2.data()).zip(g3.data()) {
                assert_abs_diff_eq!(2.5 * a, *b, epsilon = 1e-12);
                assert_abs_diff_eq!(*b, *c, epsilon = 1e-12);
            }
        }
    }

    /// Central finite differences over every parameter entry for an
    /// arbitrary composite expression.
    #[test]
    fn finite_difference_composite_expression() {
        let params = init_model::<f64>(cfg(), 7).unwrap();

        fn forward(p: &ParamSet<f64>) -> f64 {
            let mut tape = Tape::new(p);
            let x = tape.embed(&[3, 9, 14]);
            let q = tape.matmul_param(x, ParamId::EncWq);
            let k = tape.matmul_param(x, ParamId::EncWk);
            let kt = tape.transpose(k);
            let scores = tape.matmul(q, kt);
            let scaled = tape.scale(scores, 0.35);
            let attn = tape.softmax_rows(scaled, true);
            let v = tape.matmul_param(x, ParamId::EncWv);
            let h = tape.matmul(attn, v);
            let hr = tape.relu(h);
            let logits = tape.matmul_param(hr, ParamId::OutProj);
            let lp = tape.log_softmax_rows(logits);
            let picked = tape.gather_sum(lp, vec![(0, 2), (1, 7), (2, 11)]);
            let soft = tape.softplus(picked);
            tape.scalar(soft)
        }

        let mut tape = Tape::new(&params);
        let x = tape.embed(&[3, 9, 14]);
        let q = tape.matmul_param(x, ParamId::EncWq);
        let k = tape.matmul_param(x, ParamId::EncWk);
        let kt = tape.transpose(k);
        let scores = tape.matmul(q, kt);
        let scaled = tape.scale(scores, 0.35);
        let attn = tape.softmax_rows(scaled, true);
        let v = tape.matmul_param(x, ParamId::EncWv);
        let h = tape.matmul(attn, v);
        let hr = tape.relu(h);
        let logits = tape.matmul_param(hr, ParamId::OutProj);
        let lp = tape.log_softmax_rows(logits);
        let picked = tape.gather_sum(lp, vec![(0, 2), (1, 7), (2, 11)]);
        let soft = tape.softplus(picked);
        let mut grads = ParamSet::zeros_like(&params);
        tape.backward(soft, 1.0, &mut grads).unwrap();

        let eps = 1e-6;
        let mut checked = 0usize;
        for id in ParamId::ALL {
            let n = params.get(id).data().len();
            // Spot-check a spread of entries per matrix.
            for slot in [0, n / 2, n - 1] {
                let mut p_hi = params.clone();
                p_hi.get_mut(id).data_mut()[slot] += eps;
                let mut p_lo = params.clone();
                p_lo.get_mut(id).data_mut()[slot] -= eps;
                let numeric = (forward(&p_hi) - forward(&p_lo)) / (2.0 * eps);
                let analytic = grads.get(id).data()[slot];
                // Floor keeps near-zero gradients from inflating the ratio
                // past finite-difference noise.
                let denom = numeric.abs().max(analytic.abs()).max(1e-6);
                assert!(
                    (numeric - analytic).abs() / denom < 1e-5,
                    "{id:?}[{slot}]: numeric {numeric} vs analytic {analytic}"
                );
                checked += 1;
            }
        }
        assert_eq!(checked, ParamId::ALL.len() * 3);
    }

    #[test]
    fn gather_sum_duplicate_coords_accumulate() {
        let params = init_model::<f64>(cfg(), 4).unwrap();
        let mut tape = Tape::new(&params);
        let x = tape.embed(&[5]);
        let s = tape.gather_sum(x, vec![(0, 1), (0, 1)]);
        assert_abs_diff_eq!(tape.scalar(s), 2.0 * params.get(ParamId::Embed).get(5, 1), epsilon = 1e-15);
        let mut grads = ParamSet::zeros_like(&params);
        tape.backward(s, 1.0, &mut grads).unwrap();
        assert_eq!(grads.get(ParamId::Embed).get(5, 1), 2.0);
    }
}
