use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{MhsaVars, Mode};
use crate::{Error, Real, Result, Tape, Var};

/// Number of heads and per-head width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadGeometry {
    pub heads: usize,
    pub head_dim: usize,
}

impl HeadGeometry {
    pub fn new(heads: usize, head_dim: usize) -> Result<Self> {
        if heads < 1 || head_dim < 1 {
            return Err(Error::invalid("mhsa", "heads and head_dim must be >= 1"));
        }
        Ok(Self { heads, head_dim })
    }

    /// Heads of width `min(C, 64)`, as many as fit in `C` (at least one).
    pub fn for_width(width: usize) -> Self {
        let head_dim = width.min(64);
        Self {
            head_dim,
            heads: (width / head_dim).max(1),
        }
    }

    pub fn inner_width(&self) -> usize {
        self.heads * self.head_dim
    }
}

/// Inverted-dropout mask: entries are `0` with probability `p` and
/// `1 / (1 - p)` otherwise.
pub(crate) fn dropout_mask<T: Real>(rng: &mut dyn rand::RngCore, len: usize, p: f64) -> Vec<T> {
    let keep = T::of(1.0 / (1.0 - p));
    (0..len)
        .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
        .collect()
}

/// Multi-head self-attention over the rows of `[N, C]`, without positional
/// encoding.
pub fn mhsa<T: Real>(tape: &mut Tape<T>, input: Var, params: &MhsaVars, mode: Mode<'_>) -> Result<Var> {
    let shape = tape.shape(input);
    if shape.len() != 2 || shape[1] != tape.shape(params.query)[0] {
        return Err(Error::shape("mhsa", shape, tape.shape(params.query)));
    }
    let n = shape[0];
    let q = tape.matmul(input, params.query)?;
    let k = tape.matmul(input, params.key)?;
    let v = tape.matmul(input, params.value)?;
    let heads = params.heads.heads;
    let mask = match mode {
        Mode::Train(rng) if params.dropout > 0.0 => Some(dropout_mask(rng, heads * n * n, params.dropout)),
        _ => None,
    };
    let attended = tape.attention(q, k, v, heads, mask)?;
    tape.matmul(attended, params.output)
}
