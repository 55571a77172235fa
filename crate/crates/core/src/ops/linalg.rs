use crate::tape::Op;
use crate::{Error, Real, Result, Tape, Tensor, Var};

pub(crate) fn matmul<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
}

/// dA += dC · Bᵀ
pub(crate) fn matmul_grad_lhs<T: Real>(dc: &[T], b: &[T], da: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let drow = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = T::zero();
            for (&d, &bv) in drow.iter().zip(brow) {
                s += d * bv;
            }
            da[i * k + p] += s;
        }
    }
}

/// dB += Aᵀ · dC
pub(crate) fn matmul_grad_rhs<T: Real>(a: &[T], dc: &[T], db: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let drow = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            for (g, &d) in db[p * n..(p + 1) * n].iter_mut().zip(drow) {
                *g += av * d;
            }
        }
    }
}

impl<T: Real> Tape<T> {
    /// `[M, K] x [K, N] -> [M, N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.rank() != 2 || y.rank() != 2 || x.shape()[1] != y.shape()[0] {
            return Err(Error::shape("matmul", x.shape(), y.shape()));
        }
        let (m, k, n) = (x.shape()[0], x.shape()[1], y.shape()[1]);
        let mut out = Tensor::zeros(&[m, n]);
        matmul(x.data(), y.data(), out.data_mut(), m, k, n);
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// Adds a length-`N` vector to every row of an `[M, N]` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        if x.rank() != 2 || x.shape()[1] != r.len() {
            return Err(Error::shape("add_row", x.shape(), r.shape()));
        }
        let width = r.len();
        let mut out = x.clone();
        for chunk in out.data_mut().chunks_exact_mut(width) {
            for (o, &b) in chunk.iter_mut().zip(r.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(a, row), &[a, row]))
    }

    /// Mean over the rows of `[M, N]`, giving `[1, N]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.rank() != 2 {
            return Err(Error::invalid("mean_rows", "expected a matrix"));
        }
        let (m, n) = (x.shape()[0], x.shape()[1]);
        let mut out = Tensor::zeros(&[1, n]);
        for row in x.data().chunks_exact(n) {
            for (o, &v) in out.data_mut().iter_mut().zip(row) {
                *o += v;
            }
        }
        let inv = T::one() / T::of(m as f64);
        for o in out.data_mut() {
            *o *= inv;
        }
        Ok(self.push(out, Op::MeanRows(a), &[a]))
    }

    /// Affine map `x · W + b` over the rows of `[M, C]`.
    pub fn dense(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let y = self.matmul(x, weight)?;
        self.add_row(y, bias)
    }
}
