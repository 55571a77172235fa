//! Seeded initializers. Convolution and dense weights draw from
//! `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`, attention projections from
//! `U(-sqrt(6 / (fan_in + fan_out)), ...)`; biases start at zero and layer
//! norms at unit gain.

use alloc::vec::Vec;

use rand::Rng;

use crate::nn::{ConvParams, DenseParams, HeadGeometry, MhsaParams};
use crate::ops::ConvGeometry;
use crate::{Real, Tensor};

fn uniform<T: Real>(rng: &mut impl Rng, shape: &[usize], limit: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data: Vec<T> = (0..n).map(|_| T::of(rng.random_range(-limit..limit))).collect();
    Tensor::new(shape, data).expect("positive shape")
}

fn fan_in_limit(fan_in: usize) -> f64 {
    libm::sqrt(6.0 / fan_in as f64)
}

fn fan_avg_limit(fan_in: usize, fan_out: usize) -> f64 {
    libm::sqrt(6.0 / (fan_in + fan_out) as f64)
}

pub fn conv<T: Real>(
    rng: &mut impl Rng,
    kernel: usize,
    in_channels: usize,
    filters: usize,
    geometry: ConvGeometry,
) -> ConvParams<T> {
    let limit = fan_in_limit(kernel * kernel * in_channels);
    ConvParams {
        kernel: uniform(rng, &[kernel, kernel, in_channels, filters], limit),
        bias: Tensor::zeros(&[filters]),
        geometry,
    }
}

pub fn dense<T: Real>(rng: &mut impl Rng, inputs: usize, outputs: usize) -> DenseParams<T> {
    DenseParams {
        weight: uniform(rng, &[inputs, outputs], fan_in_limit(inputs)),
        bias: Tensor::zeros(&[outputs]),
    }
}

pub fn mhsa<T: Real>(rng: &mut impl Rng, width: usize, heads: HeadGeometry, dropout: f64) -> MhsaParams<T> {
    let inner = heads.inner_width();
    let limit = fan_avg_limit(width, inner);
    MhsaParams {
        query: uniform(rng, &[width, inner], limit),
        key: uniform(rng, &[width, inner], limit),
        value: uniform(rng, &[width, inner], limit),
        output: uniform(rng, &[inner, width], fan_avg_limit(inner, width)),
        heads,
        dropout,
    }
}
