//! Set-processing layers.
//!
//! Layers operate on tape variables: a set of volumes is one `[N, H, W, C]`
//! variable and a set of latent vectors one `[N, C]` variable, with row `i`
//! belonging to member `i`. Every layer here is permutation-equivariant
//! except the two fusion heads, which are invariant.

mod deepsets;
pub mod init;
mod mhsa;
mod params;
mod sab;
mod setconv;
mod fusion;

use alloc::vec::Vec;

use rand::RngCore;

pub use deepsets::deepsets_layer;
pub use fusion::{late_fusion, score_fusion};
pub use mhsa::{mhsa, HeadGeometry};
pub use params::{
    ConvParams, ConvVars, DenseParams, DenseVars, LateFusionParams, LateFusionVars, LayerNormParams,
    LayerNormVars, MhsaParams, MhsaVars, SabParams, SabVars, SetConvParams, SetConvVars,
};
pub use sab::sab;
pub use setconv::setconv2d;

use crate::{Error, Real, Result, Tensor};

/// Evaluation or training. Training enables attention dropout, drawing from
/// the supplied generator.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

impl Mode<'_> {
    pub fn is_training(&self) -> bool {
        matches!(self, Mode::Train(_))
    }

    pub fn reborrow(&mut self) -> Mode<'_> {
        match self {
            Mode::Eval => Mode::Eval,
            Mode::Train(rng) => Mode::Train(&mut **rng),
        }
    }
}

/// `N >= 1` volumes of one shape, stored as `[N, H, W, C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeSet<T = f32>(Tensor<T>);

impl<T: Real> VolumeSet<T> {
    pub fn from_members(members: &[Tensor<T>]) -> Result<Self> {
        let first = members.first().ok_or(Error::EmptySet("volume set"))?;
        if first.rank() != 3 {
            return Err(Error::invalid("volume set", "members must be H x W x C"));
        }
        Tensor::stack(members).map(Self)
    }

    pub fn from_tensor(t: Tensor<T>) -> Result<Self> {
        if t.rank() != 4 {
            return Err(Error::invalid("volume set", "expected [N, H, W, C]"));
        }
        Ok(Self(t))
    }

    pub fn len(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn member_shape(&self) -> &[usize] {
        &self.0.shape()[1..]
    }

    pub fn member(&self, i: usize) -> Tensor<T> {
        Tensor::new(self.member_shape(), self.0.outer(i).to_vec()).expect("member shape")
    }

    pub fn members(&self) -> Vec<Tensor<T>> {
        (0..self.len()).map(|i| self.member(i)).collect()
    }

    pub fn as_tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }

    pub fn permuted(&self, order: &[usize]) -> Self {
        Self(self.0.select_outer(order))
    }
}

/// `N >= 1` latent vectors, stored as `[N, C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSet<T = f32>(Tensor<T>);

impl<T: Real> LatentSet<T> {
    pub fn new(rows: Tensor<T>) -> Result<Self> {
        if rows.rank() != 2 {
            return Err(Error::invalid("latent set", "expected [N, C]"));
        }
        Ok(Self(rows))
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let width = rows.first().ok_or(Error::EmptySet("latent set"))?.len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(Tensor::from_f64(&[rows.len(), width], &flat)?)
    }

    pub fn len(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn width(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn as_tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }

    pub fn permuted(&self, order: &[usize]) -> Self {
        Self(self.0.select_outer(order))
    }
}
