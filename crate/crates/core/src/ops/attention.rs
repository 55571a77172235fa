//! Scaled dot-product attention over the rows of a set, split into heads.
//!
//! Query, key and value are `[N, h * d]`; head `j` owns columns
//! `j * d .. (j + 1) * d`. Weights are softmax-normalized over the `N` keys
//! with scale `1 / sqrt(d)`. An optional per-head `N x N` multiplicative
//! mask (dropout) is applied to the normalized weights.

use alloc::vec;
use alloc::vec::Vec;

use crate::ops::activation::softmax_rows;
use crate::tape::Op;
use crate::{Error, Real, Result, Tape, Tensor, Var};

pub(crate) struct Geometry {
    rows: usize,
    width: usize,
    heads: usize,
    head_dim: usize,
}

impl Geometry {
    pub(crate) fn new(rows: usize, width: usize, heads: usize) -> Self {
        Self {
            rows,
            width,
            heads,
            head_dim: width / heads,
        }
    }

    fn scale<T: Real>(&self) -> T {
        T::one() / T::of(self.head_dim as f64).sqrt()
    }

    #[inline]
    fn col(&self, row: usize, head: usize) -> usize {
        row * self.width + head * self.head_dim
    }
}

pub(crate) struct AttentionGrads<T> {
    pub(crate) query: Vec<T>,
    pub(crate) key: Vec<T>,
    pub(crate) value: Vec<T>,
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Returns `(output, weights)`; `weights` is `heads * N * N`, pre-mask.
fn forward<T: Real>(g: &Geometry, q: &[T], k: &[T], v: &[T], mask: Option<&[T]>) -> (Vec<T>, Vec<T>) {
    let (n, d) = (g.rows, g.head_dim);
    let scale: T = g.scale();
    let mut weights = vec![T::zero(); g.heads * n * n];
    let mut out = vec![T::zero(); n * g.width];
    for h in 0..g.heads {
        let w = &mut weights[h * n * n..(h + 1) * n * n];
        for i in 0..n {
            let qi = &q[g.col(i, h)..g.col(i, h) + d];
            for j in 0..n {
                w[i * n + j] = dot(qi, &k[g.col(j, h)..g.col(j, h) + d]) * scale;
            }
        }
        softmax_rows(w, n);
        for i in 0..n {
            for j in 0..n {
                let mut a = w[i * n + j];
                if let Some(m) = mask {
                    a *= m[h * n * n + i * n + j];
                }
                if a == T::zero() {
                    continue;
                }
                let (o, vj) = (g.col(i, h), g.col(j, h));
                for t in 0..d {
                    out[o + t] += a * v[vj + t];
                }
            }
        }
    }
    (out, weights)
}

pub(crate) fn backward<T: Real>(
    g: &Geometry,
    q: &[T],
    k: &[T],
    v: &[T],
    weights: &[T],
    mask: Option<&[T]>,
    dy: &[T],
) -> AttentionGrads<T> {
    let (n, d) = (g.rows, g.head_dim);
    let scale: T = g.scale();
    let mut dq = vec![T::zero(); q.len()];
    let mut dk = vec![T::zero(); k.len()];
    let mut dv = vec![T::zero(); v.len()];
    let mut dw = vec![T::zero(); n * n];
    for h in 0..g.heads {
        let w = &weights[h * n * n..(h + 1) * n * n];
        let m = |i: usize, j: usize| mask.map_or(T::one(), |m| m[h * n * n + i * n + j]);
        for i in 0..n {
            let dyi = &dy[g.col(i, h)..g.col(i, h) + d];
            for j in 0..n {
                let vj = g.col(j, h);
                let mij = m(i, j);
                dw[i * n + j] = dot(dyi, &v[vj..vj + d]) * mij;
                let a = w[i * n + j] * mij;
                for t in 0..d {
                    dv[vj + t] += a * dyi[t];
                }
            }
        }
        // softmax backward, row by row, in place on dw
        for i in 0..n {
            let wr = &w[i * n..(i + 1) * n];
            let dr = &mut dw[i * n..(i + 1) * n];
            let s = dot(wr, dr);
            for (dr, &wr) in dr.iter_mut().zip(wr) {
                *dr = wr * (*dr - s) * scale;
            }
        }
        for i in 0..n {
            let qi = g.col(i, h);
            for j in 0..n {
                let ds = dw[i * n + j];
                if ds == T::zero() {
                    continue;
                }
                let kj = g.col(j, h);
                for t in 0..d {
                    dq[qi + t] += ds * k[kj + t];
                    dk[kj + t] += ds * q[qi + t];
                }
            }
        }
    }
    AttentionGrads {
        query: dq,
        key: dk,
        value: dv,
    }
}

impl<T: Real> Tape<T> {
    /// Multi-head scaled dot-product attention. `mask`, when given, holds
    /// `heads * N * N` multipliers applied to the softmax weights.
    pub fn attention(&mut self, query: Var, key: Var, value: Var, heads: usize, mask: Option<Vec<T>>) -> Result<Var> {
        let (q, k, v) = (self.value(query), self.value(key), self.value(value));
        if q.rank() != 2 || q.shape() != k.shape() || q.shape() != v.shape() {
            return Err(Error::shape("attention", q.shape(), k.shape()));
        }
        let (n, width) = (q.shape()[0], q.shape()[1]);
        if heads == 0 || width % heads != 0 {
            return Err(Error::invalid("attention", "width must be a positive multiple of heads"));
        }
        if let Some(m) = &mask {
            if m.len() != heads * n * n {
                return Err(Error::invalid("attention", "mask must hold heads * N * N entries"));
            }
        }
        let geom = Geometry::new(n, width, heads);
        let (out, weights) = forward(&geom, q.data(), k.data(), v.data(), mask.as_deref());
        let out = Tensor::new(&[n, width], out)?;
        Ok(self.push(
            out,
            Op::Attention {
                query,
                key,
                value,
                heads,
                weights,
                mask,
            },
            &[query, key, value],
        ))
    }
}
