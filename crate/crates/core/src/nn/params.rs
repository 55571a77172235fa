//! Parameter containers.
//!
//! Each `*Params` struct owns tensors; `bind` records them as tape leaves
//! and returns the matching `*Vars` struct. `tensors` / `tensors_mut` and
//! `*Vars::vars` all list fields in the same order, which is how gradients
//! are matched back to parameters.

use alloc::vec;
use alloc::vec::Vec;

use crate::nn::HeadGeometry;
use crate::ops::{Activation, ConvGeometry};
use crate::{Error, Real, Result, Tape, Tensor, Var};

fn check(op: &'static str, t: &Tensor<impl Real>, shape: &[usize]) -> Result<()> {
    if t.shape() != shape {
        return Err(Error::shape(op, t.shape(), shape));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T = f32> {
    /// `[kH, kW, Cin, Cout]`
    pub kernel: Tensor<T>,
    /// `[Cout]`
    pub bias: Tensor<T>,
    pub geometry: ConvGeometry,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvVars {
    pub kernel: Var,
    pub bias: Var,
    pub geometry: ConvGeometry,
}

impl<T: Real> ConvParams<T> {
    pub fn new(kernel: Tensor<T>, bias: Tensor<T>, geometry: ConvGeometry) -> Result<Self> {
        geometry.validate()?;
        if kernel.rank() != 4 || bias.shape() != [kernel.shape()[3]] {
            return Err(Error::shape("conv params", kernel.shape(), bias.shape()));
        }
        Ok(Self {
            kernel,
            bias,
            geometry,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[3]
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> ConvVars {
        ConvVars {
            kernel: tape.leaf(self.kernel.clone()),
            bias: tape.leaf(self.bias.clone()),
            geometry: self.geometry,
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![("kernel", &self.kernel), ("bias", &self.bias)]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.kernel, &mut self.bias]
    }
}

impl ConvVars {
    pub fn vars(&self) -> Vec<Var> {
        vec![self.kernel, self.bias]
    }
}

/// Multi-head self-attention projections, without additive biases.
#[derive(Debug, Clone, PartialEq)]
pub struct MhsaParams<T = f32> {
    /// `[C, h * d]`, heads concatenated along columns.
    pub query: Tensor<T>,
    pub key: Tensor<T>,
    pub value: Tensor<T>,
    /// `[h * d, C]`
    pub output: Tensor<T>,
    pub heads: HeadGeometry,
    /// Dropout probability on attention weights (training only).
    pub dropout: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct MhsaVars {
    pub query: Var,
    pub key: Var,
    pub value: Var,
    pub output: Var,
    pub heads: HeadGeometry,
    pub dropout: f64,
}

impl<T: Real> MhsaParams<T> {
    pub fn new(
        query: Tensor<T>,
        key: Tensor<T>,
        value: Tensor<T>,
        output: Tensor<T>,
        heads: HeadGeometry,
        dropout: f64,
    ) -> Result<Self> {
        if query.rank() != 2 {
            return Err(Error::invalid("mhsa params", "projections must be matrices"));
        }
        let width = query.shape()[0];
        let inner = heads.inner_width();
        for t in [&query, &key, &value] {
            check("mhsa params", t, &[width, inner])?;
        }
        check("mhsa params", &output, &[inner, width])?;
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::invalid("mhsa params", "dropout must lie in [0, 1)"));
        }
        Ok(Self {
            query,
            key,
            value,
            output,
            heads,
            dropout,
        })
    }

    pub fn width(&self) -> usize {
        self.query.shape()[0]
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> MhsaVars {
        MhsaVars {
            query: tape.leaf(self.query.clone()),
            key: tape.leaf(self.key.clone()),
            value: tape.leaf(self.value.clone()),
            output: tape.leaf(self.output.clone()),
            heads: self.heads,
            dropout: self.dropout,
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![
            ("query", &self.query),
            ("key", &self.key),
            ("value", &self.value),
            ("output", &self.output),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.query, &mut self.key, &mut self.value, &mut self.output]
    }
}

impl MhsaVars {
    pub fn vars(&self) -> Vec<Var> {
        vec![self.query, self.key, self.value, self.output]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetConvParams<T = f32> {
    pub conv: ConvParams<T>,
    pub mhsa: MhsaParams<T>,
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy)]
pub struct SetConvVars {
    pub conv: ConvVars,
    pub mhsa: MhsaVars,
    pub activation: Activation,
}

impl<T: Real> SetConvParams<T> {
    pub fn new(conv: ConvParams<T>, mhsa: MhsaParams<T>, activation: Activation) -> Result<Self> {
        if mhsa.width() != conv.out_channels() {
            return Err(Error::invalid(
                "setconv2d params",
                "attention width must equal the conv filter count",
            ));
        }
        Ok(Self {
            conv,
            mhsa,
            activation,
        })
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> SetConvVars {
        SetConvVars {
            conv: self.conv.bind(tape),
            mhsa: self.mhsa.bind(tape),
            activation: self.activation,
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        let mut out = vec![("conv.kernel", &self.conv.kernel), ("conv.bias", &self.conv.bias)];
        out.extend([
            ("mhsa.query", &self.mhsa.query),
            ("mhsa.key", &self.mhsa.key),
            ("mhsa.value", &self.mhsa.value),
            ("mhsa.output", &self.mhsa.output),
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = self.conv.tensors_mut();
        out.extend(self.mhsa.tensors_mut());
        out
    }
}

impl SetConvVars {
    pub fn vars(&self) -> Vec<Var> {
        let mut out = self.conv.vars();
        out.extend(self.mhsa.vars());
        out
    }
}

/// Row-wise affine map: `x · weight + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams<T = f32> {
    /// `[C, K]`
    pub weight: Tensor<T>,
    /// `[K]`
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct DenseVars {
    pub weight: Var,
    pub bias: Var,
}

impl<T: Real> DenseParams<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        if weight.rank() != 2 || bias.shape() != [weight.shape()[1]] {
            return Err(Error::shape("dense params", weight.shape(), bias.shape()));
        }
        Ok(Self { weight, bias })
    }

    pub fn identity(width: usize) -> Self {
        let mut weight = Tensor::zeros(&[width, width]);
        for i in 0..width {
            weight.data_mut()[i * width + i] = T::one();
        }
        Self {
            weight,
            bias: Tensor::zeros(&[width]),
        }
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> DenseVars {
        DenseVars {
            weight: tape.leaf(self.weight.clone()),
            bias: tape.leaf(self.bias.clone()),
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![("weight", &self.weight), ("bias", &self.bias)]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

impl DenseVars {
    pub fn vars(&self) -> Vec<Var> {
        vec![self.weight, self.bias]
    }

    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        tape.dense(x, self.weight, self.bias)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams<T = f32> {
    pub gain: Tensor<T>,
    pub shift: Tensor<T>,
    pub eps: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNormVars {
    pub gain: Var,
    pub shift: Var,
    pub eps: f64,
}

impl<T: Real> LayerNormParams<T> {
    /// Unit gain, zero shift.
    pub fn unit(width: usize) -> Self {
        Self {
            gain: Tensor::full(&[width], T::one()),
            shift: Tensor::zeros(&[width]),
            eps: crate::ops::norm::LAYER_NORM_EPS,
        }
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> LayerNormVars {
        LayerNormVars {
            gain: tape.leaf(self.gain.clone()),
            shift: tape.leaf(self.shift.clone()),
            eps: self.eps,
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![("gain", &self.gain), ("shift", &self.shift)]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.gain, &mut self.shift]
    }
}

impl LayerNormVars {
    pub fn vars(&self) -> Vec<Var> {
        vec![self.gain, self.shift]
    }

    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        tape.layer_norm(x, self.gain, self.shift, T::of(self.eps))
    }
}

/// `LayerNorm(H + rFF(H))` with `H = LayerNorm(S + MHSA(S))`.
#[derive(Debug, Clone, PartialEq)]
pub struct SabParams<T = f32> {
    pub mhsa: MhsaParams<T>,
    pub norm1: LayerNormParams<T>,
    pub rff: DenseParams<T>,
    pub rff_activation: Activation,
    pub norm2: LayerNormParams<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct SabVars {
    pub mhsa: MhsaVars,
    pub norm1: LayerNormVars,
    pub rff: DenseVars,
    pub rff_activation: Activation,
    pub norm2: LayerNormVars,
}

impl<T: Real> SabParams<T> {
    pub fn bind(&self, tape: &mut Tape<T>) -> SabVars {
        SabVars {
            mhsa: self.mhsa.bind(tape),
            norm1: self.norm1.bind(tape),
            rff: self.rff.bind(tape),
            rff_activation: self.rff_activation,
            norm2: self.norm2.bind(tape),
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![
            ("mhsa.query", &self.mhsa.query),
            ("mhsa.key", &self.mhsa.key),
            ("mhsa.value", &self.mhsa.value),
            ("mhsa.output", &self.mhsa.output),
            ("norm1.gain", &self.norm1.gain),
            ("norm1.shift", &self.norm1.shift),
            ("rff.weight", &self.rff.weight),
            ("rff.bias", &self.rff.bias),
            ("norm2.gain", &self.norm2.gain),
            ("norm2.shift", &self.norm2.shift),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = self.mhsa.tensors_mut();
        out.extend(self.norm1.tensors_mut());
        out.extend(self.rff.tensors_mut());
        out.extend(self.norm2.tensors_mut());
        out
    }
}

impl SabVars {
    pub fn vars(&self) -> Vec<Var> {
        let mut out = self.mhsa.vars();
        out.extend(self.norm1.vars());
        out.extend(self.rff.vars());
        out.extend(self.norm2.vars());
        out
    }
}

/// `σ(β + mean(S) · Γ)` followed by layer normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct LateFusionParams<T = f32> {
    /// `[C, K]`
    pub gamma: Tensor<T>,
    /// `[K]`
    pub beta: Tensor<T>,
    pub activation: Activation,
    pub norm: LayerNormParams<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct LateFusionVars {
    pub gamma: Var,
    pub beta: Var,
    pub activation: Activation,
    pub norm: LayerNormVars,
}

impl<T: Real> LateFusionParams<T> {
    pub fn new(gamma: Tensor<T>, beta: Tensor<T>, activation: Activation) -> Result<Self> {
        if gamma.rank() != 2 || beta.shape() != [gamma.shape()[1]] {
            return Err(Error::shape("late fusion params", gamma.shape(), beta.shape()));
        }
        let norm = LayerNormParams::unit(gamma.shape()[1]);
        Ok(Self {
            gamma,
            beta,
            activation,
            norm,
        })
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> LateFusionVars {
        LateFusionVars {
            gamma: tape.leaf(self.gamma.clone()),
            beta: tape.leaf(self.beta.clone()),
            activation: self.activation,
            norm: self.norm.bind(tape),
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![
            ("gamma", &self.gamma),
            ("beta", &self.beta),
            ("norm.gain", &self.norm.gain),
            ("norm.shift", &self.norm.shift),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![&mut self.gamma, &mut self.beta];
        out.extend(self.norm.tensors_mut());
        out
    }
}

impl LateFusionVars {
    pub fn vars(&self) -> Vec<Var> {
        let mut out = vec![self.gamma, self.beta];
        out.extend(self.norm.vars());
        out
    }
}
