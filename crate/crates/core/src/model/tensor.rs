//! Minimal row-major matrix type backing the forward and backward passes.

use crate::num::{s, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![F::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Tensor { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: F) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    /// Single row as a 1 x cols tensor.
    pub fn row_tensor(&self, r: usize) -> Tensor<F> {
        Tensor::from_vec(1, self.cols, self.row(r).to_vec())
    }

    /// self += c * other
    pub fn add_scaled(&mut self, other: &Tensor<F>, c: F) {
        debug_assert_eq!(self.shape(), other.shape());
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += c * *y;
        }
    }

    pub fn scale_in_place(&mut self, c: F) {
        for x in &mut self.data {
            *x *= c;
        }
    }

    pub fn transpose(&self) -> Tensor<F> {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.get(r, c));
            }
        }
        out
    }
}

/// C = A . B
pub fn matmul<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    assert_eq!(a.cols, b.rows, "matmul shape mismatch {:?} x {:?}", a.shape(), b.shape());
    let mut out = Tensor::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let a_row = a.row(i);
        let out_row = out.row_mut(i);
        for (k, &aik) in a_row.iter().enumerate() {
            if aik == F::zero() {
                continue;
            }
            let b_row = b.row(k);
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aik * bkj;
            }
        }
    }
    out
}

/// C = A . B^T
pub fn matmul_nt<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    assert_eq!(a.cols, b.cols, "matmul_nt shape mismatch {:?} x {:?}T", a.shape(), b.shape());
    let mut out = Tensor::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let a_row = a.row(i);
        for j in 0..b.rows {
            let b_row = b.row(j);
            let mut acc = F::zero();
            for (x, y) in a_row.iter().zip(b_row) {
                acc += *x * *y;
            }
            out.set(i, j, acc);
        }
    }
    out
}

/// C = A^T . B
pub fn matmul_tn<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    assert_eq!(a.rows, b.rows, "matmul_tn shape mismatch {:?}T x {:?}", a.shape(), b.shape());
    let mut out = Tensor::zeros(a.cols, b.cols);
    for k in 0..a.rows {
        let a_row = a.row(k);
        let b_row = b.row(k);
        for (i, &aki) in a_row.iter().enumerate() {
            if aki == F::zero() {
                continue;
            }
            let out_row = out.row_mut(i);
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aki * bkj;
            }
        }
    }
    out
}

pub fn add<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    assert_eq!(a.shape(), b.shape());
    let data = a.data.iter().zip(&b.data).map(|(x, y)| *x + *y).collect();
    Tensor::from_vec(a.rows, a.cols, data)
}

pub fn sub<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    assert_eq!(a.shape(), b.shape());
    let data = a.data.iter().zip(&b.data).map(|(x, y)| *x - *y).collect();
    Tensor::from_vec(a.rows, a.cols, data)
}

pub fn scale<F: Scalar>(a: &Tensor<F>, c: F) -> Tensor<F> {
    Tensor::from_vec(a.rows, a.cols, a.data.iter().map(|x| *x * c).collect())
}

pub fn relu<F: Scalar>(a: &Tensor<F>) -> Tensor<F> {
    Tensor::from_vec(
        a.rows,
        a.cols,
        a.data.iter().map(|x| if *x > F::zero() { *x } else { F::zero() }).collect(),
    )
}

pub fn softplus<F: Scalar>(a: &Tensor<F>) -> Tensor<F> {
    // ln(1 + e^x), computed as max(x, 0) + ln1p(e^-|x|) for stability.
    Tensor::from_vec(
        a.rows,
        a.cols,
        a.data
            .iter()
            .map(|x| x.max(F::zero()) + (-x.abs()).exp().ln_1p())
            .collect(),
    )
}

pub fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Row-wise softmax. With `causal`, entry (i, j) participates only when
/// j <= i; masked entries come out exactly zero.
pub fn softmax_rows<F: Scalar>(a: &Tensor<F>, causal: bool) -> Tensor<F> {
    let mut out = Tensor::zeros(a.rows, a.cols);
    for i in 0..a.rows {
        let limit = if causal { (i + 1).min(a.cols) } else { a.cols };
        let row = &a.row(i)[..limit];
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let mut denom = F::zero();
        let mut exps = vec![F::zero(); limit];
        for (e, &x) in exps.iter_mut().zip(row) {
            *e = (x - max).exp();
            denom += *e;
        }
        let out_row = out.row_mut(i);
        for (o, e) in out_row[..limit].iter_mut().zip(&exps) {
            *o = *e / denom;
        }
    }
    out
}

/// Row-wise log-softmax with the standard logsumexp stabilization.
pub fn log_softmax_rows<F: Scalar>(a: &Tensor<F>) -> Tensor<F> {
    let mut out = Tensor::zeros(a.rows, a.cols);
    for i in 0..a.rows {
        let row = a.row(i);
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<F>().ln();
        for (o, &x) in out.row_mut(i).iter_mut().zip(row) {
            *o = x - lse;
        }
    }
    out
}

/// Sinusoidal absolute position encodings, `len x d` with even `d`.
pub fn positional_encoding<F: Scalar>(len: usize, d: usize) -> Tensor<F> {
    debug_assert!(d % 2 == 0);
    let mut pe = Tensor::zeros(len, d);
    for pos in 0..len {
        for i in 0..d / 2 {
            let freq = s::<F>(1.0 / 10000f64.powf(2.0 * i as f64 / d as f64));
            let angle = s::<F>(pos as f64) * freq;
            pe.set(pos, 2 * i, angle.sin());
            pe.set(pos, 2 * i + 1, angle.cos());
        }
    }
    pe
}
