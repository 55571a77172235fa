use alloc::vec::Vec;

use crate::tape::Op;
use crate::{Error, Real, Result, Tape, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub(crate) fn input_grad<T: Real>(gain: &[T], xhat: &[T], rstd: &[T], dy: &[T], g: &mut [T]) {
    let width = gain.len();
    let inv_w = T::one() / T::of(width as f64);
    for (((dr, hr), gr), &rs) in dy
        .chunks_exact(width)
        .zip(xhat.chunks_exact(width))
        .zip(g.chunks_exact_mut(width))
        .zip(rstd)
    {
        let mut mean_d = T::zero();
        let mut mean_dh = T::zero();
        for ((&d, &gamma), &h) in dr.iter().zip(gain).zip(hr) {
            let dh = d * gamma;
            mean_d += dh;
            mean_dh += dh * h;
        }
        mean_d *= inv_w;
        mean_dh *= inv_w;
        for (((g, &d), &gamma), &h) in gr.iter_mut().zip(dr).zip(gain).zip(hr) {
            *g += rs * (d * gamma - mean_d - h * mean_dh);
        }
    }
}

impl<T: Real> Tape<T> {
    /// Normalizes each row of the last axis to zero mean and unit variance,
    /// then applies `gain` and `shift`.
    pub fn layer_norm(&mut self, input: Var, gain: Var, shift: Var, eps: T) -> Result<Var> {
        let (x, gv, sv) = (self.value(input), self.value(gain), self.value(shift));
        let width = x.shape()[x.rank() - 1];
        if gv.len() != width || sv.len() != width {
            return Err(Error::shape("layer_norm", x.shape(), gv.shape()));
        }
        let inv_w = T::one() / T::of(width as f64);
        let mut normalized = Vec::with_capacity(x.len());
        let mut rstd = Vec::with_capacity(x.len() / width);
        let mut out = Vec::with_capacity(x.len());
        for row in x.data().chunks_exact(width) {
            let mean = row.iter().copied().sum::<T>() * inv_w;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_w;
            let rs = T::one() / (var + eps).sqrt();
            rstd.push(rs);
            for ((&v, &gamma), &beta) in row.iter().zip(gv.data()).zip(sv.data()) {
                let h = (v - mean) * rs;
                normalized.push(h);
                out.push(h * gamma + beta);
            }
        }
        let out = Tensor::new(x.shape(), out)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                input,
                gain,
                shift,
                normalized,
                rstd,
            },
            &[input, gain, shift],
        ))
    }
}
