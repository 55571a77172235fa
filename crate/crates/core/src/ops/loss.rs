//! Likelihood losses on probabilities. Probabilities are clamped at
//! [`PROB_FLOOR`] before the log; clamped entries pass no gradient.

use alloc::format;


use crate::tape::Op;
use crate::{Error, Real, Result, Tape, Tensor, Var};

pub const PROB_FLOOR: f64 = 1e-12;

/// Lower clamp that lets NaN through.
fn floored<T: Real>(p: T) -> T {
    let floor = T::of(PROB_FLOOR);
    if p < floor {
        floor
    } else {
        p
    }
}

pub(crate) fn nll_grad<T: Real>(p: &Tensor<T>, targets: &[usize], weight: T, up: T, g: &mut [T]) {
    let k = p.shape()[p.rank() - 1];
    let floor = T::of(PROB_FLOOR);
    for (i, &t) in targets.iter().enumerate() {
        let pv = p.data()[i * k + t];
        if pv > floor {
            g[i * k + t] -= up * weight / pv;
        }
    }
}

pub(crate) fn bce_grad<T: Real>(p: &[T], flags: &[bool], weight: T, up: T, g: &mut [T]) {
    let floor = T::of(PROB_FLOOR);
    for ((g, &pv), &f) in g.iter_mut().zip(p).zip(flags) {
        if f {
            if pv > floor {
                *g -= up * weight / pv;
            }
        } else if T::one() - pv > floor {
            *g += up * weight / (T::one() - pv);
        }
    }
}

impl<T: Real> Tape<T> {
    /// `-weight * sum_i ln p[i, targets[i]]` for row distributions `[M, K]`.
    pub fn nll(&mut self, probs: Var, targets: &[usize], weight: T) -> Result<Var> {
        let p = self.value(probs);
        let k = p.shape()[p.rank() - 1];
        let rows = p.len() / k;
        if targets.len() != rows {
            return Err(Error::invalid(
                "nll",
                format!("{} targets for {rows} rows", targets.len()),
            ));
        }
        let mut total = T::zero();
        for (i, &t) in targets.iter().enumerate() {
            if t >= k {
                return Err(Error::LabelOutOfRange { label: t, classes: k });
            }
            total -= floored(p.data()[i * k + t]).ln();
        }
        let out = Tensor::scalar(total * weight);
        Ok(self.push(
            out,
            Op::Nll {
                probs,
                targets: targets.to_vec(),
                weight,
            },
            &[probs],
        ))
    }

    /// `-weight * sum_i [f_i ln p_i + (1 - f_i) ln(1 - p_i)]`.
    pub fn bce(&mut self, probs: Var, flags: &[bool], weight: T) -> Result<Var> {
        let p = self.value(probs);
        if p.len() != flags.len() {
            return Err(Error::invalid(
                "bce",
                format!("{} flags for {} probabilities", flags.len(), p.len()),
            ));
        }
        let total: T = p
            .data()
            .iter()
            .zip(flags)
            .map(|(&pv, &f)| if f { -floored(pv).ln() } else { -floored(T::one() - pv).ln() })
            .sum();
        let out = Tensor::scalar(total * weight);
        Ok(self.push(
            out,
            Op::Bce {
                probs,
                flags: flags.to_vec(),
                weight,
            },
            &[probs],
        ))
    }
}

/// Plain-value cross-entropy, used by evaluation code.
pub fn cross_entropy<T: Real>(dist: &[T], label: usize) -> f64 {
    -floored(dist[label]).ln().f64()
}

