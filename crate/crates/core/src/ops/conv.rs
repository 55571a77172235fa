//! 2-D cross-correlation over channels-last batches.
//!
//! `same` padding produces `ceil(H / stride)` rows; when the total padding is
//! odd the extra row (column) goes to the bottom (right).

use alloc::format;

use serde::{Deserialize, Serialize};

use crate::tape::Op;
use crate::{Error, Real, Result, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub stride: usize,
    pub dilation: usize,
    pub padding: Padding,
}

impl Default for ConvGeometry {
    fn default() -> Self {
        Self {
            stride: 1,
            dilation: 1,
            padding: Padding::Same,
        }
    }
}

impl ConvGeometry {
    pub fn same() -> Self {
        Self::default()
    }

    pub fn valid() -> Self {
        Self {
            padding: Padding::Valid,
            ..Self::default()
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride < 1 || self.dilation < 1 {
            return Err(Error::invalid("conv2d", "stride and dilation must be >= 1"));
        }
        Ok(())
    }

    /// Output length and leading padding along one spatial axis.
    pub fn output_dim(&self, input: usize, kernel: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let span = self.dilation * (kernel - 1) + 1;
        match self.padding {
            Padding::Same => {
                let out = input.div_ceil(self.stride);
                let needed = ((out - 1) * self.stride + span).saturating_sub(input);
                Ok((out, needed / 2))
            }
            Padding::Valid => {
                if input < span {
                    return Err(Error::invalid(
                        "conv2d",
                        format!("valid padding needs input >= {span}, got {input}"),
                    ));
                }
                Ok(((input - span) / self.stride + 1, 0))
            }
        }
    }
}

/// Resolved loop bounds for one conv2d node.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvPlan {
    batch: usize,
    in_h: usize,
    in_w: usize,
    in_c: usize,
    k_h: usize,
    k_w: usize,
    out_c: usize,
    out_h: usize,
    out_w: usize,
    pad_top: usize,
    pad_left: usize,
    stride: usize,
    dilation: usize,
}

impl ConvPlan {
    fn new(input: &[usize], kernel: &[usize], geom: &ConvGeometry) -> Result<Self> {
        if input.len() != 4 || kernel.len() != 4 || input[3] != kernel[2] {
            return Err(Error::shape("conv2d", input, kernel));
        }
        let (out_h, pad_top) = geom.output_dim(input[1], kernel[0])?;
        let (out_w, pad_left) = geom.output_dim(input[2], kernel[1])?;
        Ok(Self {
            batch: input[0],
            in_h: input[1],
            in_w: input[2],
            in_c: input[3],
            k_h: kernel[0],
            k_w: kernel[1],
            out_c: kernel[3],
            out_h,
            out_w,
            pad_top,
            pad_left,
            stride: geom.stride,
            dilation: geom.dilation,
        })
    }

    /// Calls `f(out_offset, in_offset, kernel_offset)` for every in-bounds
    /// tap; offsets index the start of the channel runs.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        for n in 0..self.batch {
            for oy in 0..self.out_h {
                for ox in 0..self.out_w {
                    let out_off = ((n * self.out_h + oy) * self.out_w + ox) * self.out_c;
                    for ky in 0..self.k_h {
                        let iy = (oy * self.stride + ky * self.dilation) as isize - self.pad_top as isize;
                        if iy < 0 || iy >= self.in_h as isize {
                            continue;
                        }
                        for kx in 0..self.k_w {
                            let ix = (ox * self.stride + kx * self.dilation) as isize
                                - self.pad_left as isize;
                            if ix < 0 || ix >= self.in_w as isize {
                                continue;
                            }
                            let in_off = ((n * self.in_h + iy as usize) * self.in_w + ix as usize) * self.in_c;
                            let k_off = (ky * self.k_w + kx) * self.in_c * self.out_c;
                            f(out_off, in_off, k_off);
                        }
                    }
                }
            }
        }
    }
}

fn forward<T: Real>(plan: &ConvPlan, x: &[T], k: &[T], b: &[T], out: &mut [T]) {
    let (ci, co) = (plan.in_c, plan.out_c);
    for row in out.chunks_exact_mut(co) {
        row.copy_from_slice(b);
    }
    plan.for_each_tap(|o, i, kk| {
        let out_row = &mut out[o..o + co];
        for (c, &xv) in x[i..i + ci].iter().enumerate() {
            if xv == T::zero() {
                continue;
            }
            let krow = &k[kk + c * co..kk + (c + 1) * co];
            for (acc, &w) in out_row.iter_mut().zip(krow) {
                *acc += xv * w;
            }
        }
    });
}

pub(crate) fn bias_grad<T: Real>(plan: &ConvPlan, dy: &[T], g: &mut [T]) {
    for row in dy.chunks_exact(plan.out_c) {
        for (g, &d) in g.iter_mut().zip(row) {
            *g += d;
        }
    }
}

pub(crate) fn kernel_grad<T: Real>(plan: &ConvPlan, x: &[T], dy: &[T], g: &mut [T]) {
    let (ci, co) = (plan.in_c, plan.out_c);
    plan.for_each_tap(|o, i, kk| {
        let drow = &dy[o..o + co];
        for (c, &xv) in x[i..i + ci].iter().enumerate() {
            if xv == T::zero() {
                continue;
            }
            let grow = &mut g[kk + c * co..kk + (c + 1) * co];
            for (gw, &d) in grow.iter_mut().zip(drow) {
                *gw += xv * d;
            }
        }
    });
}

pub(crate) fn input_grad<T: Real>(plan: &ConvPlan, k: &[T], dy: &[T], g: &mut [T]) {
    let (ci, co) = (plan.in_c, plan.out_c);
    plan.for_each_tap(|o, i, kk| {
        let drow = &dy[o..o + co];
        for c in 0..ci {
            let krow = &k[kk + c * co..kk + (c + 1) * co];
            let s: T = krow.iter().zip(drow).map(|(&w, &d)| w * d).sum();
            g[i + c] += s;
        }
    });
}

impl<T: Real> Tape<T> {
    /// `[N, H, W, Cin]` with kernel `[kH, kW, Cin, Cout]` and bias `[Cout]`
    /// gives `[N, H', W', Cout]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, geom: ConvGeometry) -> Result<Var> {
        let (x, k, b) = (self.value(input), self.value(kernel), self.value(bias));
        let plan = ConvPlan::new(x.shape(), k.shape(), &geom)?;
        if b.len() != plan.out_c {
            return Err(Error::shape("conv2d bias", k.shape(), b.shape()));
        }
        let mut out = Tensor::zeros(&[plan.batch, plan.out_h, plan.out_w, plan.out_c]);
        forward(&plan, x.data(), k.data(), b.data(), out.data_mut());
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                plan,
            },
            &[input, kernel, bias],
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct cross-correlation of one member with explicit zero padding.
    fn oracle(x: &Tensor<f64>, k: &Tensor<f64>, b: &[f64], stride: usize, pad: (usize, usize), out_hw: (usize, usize)) -> Vec<f64> {
        let [_, h, w, ci] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
        let [kh, kw, _, co] = [k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]];
        let mut out = Vec::new();
        for oy in 0..out_hw.0 {
            for ox in 0..out_hw.1 {
                for o in 0..co {
                    let mut s = b[o];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as i64 - pad.0 as i64;
                            let ix = (ox * stride + kx) as i64 - pad.1 as i64;
                            if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                continue;
                            }
                            for c in 0..ci {
                                let xv = x.data()[((iy as usize) * w + ix as usize) * ci + c];
                                s += xv * k.data()[((ky * kw + kx) * ci + c) * co + o];
                            }
                        }
                    }
                    out.push(s);
                }
            }
        }
        out
    }

    #[test]
    fn one_by_one_kernel_scales() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64(&[1, 2, 2, 1], &[1.0, 2.0, 3.0, 4.0]).unwrap());
        let k = tape.constant(Tensor::from_f64(&[1, 1, 1, 1], &[2.0]).unwrap());
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = tape.conv2d(x, k, b, ConvGeometry::same()).unwrap();
        assert_eq!(tape.value(y).data(), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn zero_kernel_gives_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(random(&mut rng, &[2, 5, 4, 3]));
        let k = tape.constant(Tensor::zeros(&[3, 3, 3, 2]));
        let b = tape.constant(Tensor::from_f64(&[2], &[0.5, -1.5]).unwrap());
        let y = tape.conv2d(x, k, b, ConvGeometry::same()).unwrap();
        assert_eq!(tape.shape(y), &[2, 5, 4, 2]);
        for cell in tape.value(y).data().chunks(2) {
            assert_eq!(cell, &[0.5, -1.5]);
        }
    }

    #[test]
    fn same_stride_two_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(&mut rng, &[1, 4, 4, 1]);
        let k = random(&mut rng, &[3, 3, 1, 1]);
        let mut tape = Tape::<f64>::new();
        let (xv, kv) = (tape.constant(x.clone()), tape.constant(k.clone()));
        let b = tape.constant(Tensor::from_f64(&[1], &[0.25]).unwrap());
        let y = tape.conv2d(xv, kv, b, ConvGeometry::same().with_stride(2)).unwrap();
        assert_eq!(tape.shape(y), &[1, 2, 2, 1]);
        // out = ceil(4/2) = 2; needed = (2-1)*2 + 3 - 4 = 1 -> top 0, bottom 1
        let expected = oracle(&x, &k, &[0.25], 2, (0, 0), (2, 2));
        for (a, e) in tape.value(y).data().iter().zip(&expected) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn same_padding_puts_extra_cell_bottom_right() {
        // 2x2 kernel, stride 1 on 3x3: total pad 1 -> top 0, bottom 1.
        let g = ConvGeometry::same();
        assert_eq!(g.output_dim(3, 2).unwrap(), (3, 0));
        assert_eq!(g.output_dim(3, 3).unwrap(), (3, 1));
        assert_eq!(g.output_dim(6, 4).unwrap(), (6, 1));
    }

    #[test]
    fn valid_output_dims() {
        let g = ConvGeometry::valid().with_stride(2).with_dilation(2);
        // floor((9 - 2*(3-1) - 1)/2) + 1 = 3
        assert_eq!(g.output_dim(9, 3).unwrap().0, 3);
        assert!(g.output_dim(4, 3).is_err());
    }

    #[test]
    fn dilated_valid_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&mut rng, &[1, 7, 6, 2]);
        let k = random(&mut rng, &[2, 2, 2, 3]);
        let mut tape = Tape::<f64>::new();
        let (xv, kv) = (tape.constant(x.clone()), tape.constant(k.clone()));
        let b = tape.constant(Tensor::zeros(&[3]));
        let geom = ConvGeometry::valid().with_dilation(2);
        let y = tape.conv2d(xv, kv, b, geom).unwrap();
        assert_eq!(tape.shape(y), &[1, 5, 4, 3]);
        // dilation 2 == a 3x3 kernel with zeros at odd taps
        let mut k3 = Tensor::zeros(&[3, 3, 2, 3]);
        for ky in 0..2 {
            for kx in 0..2 {
                for c in 0..6 {
                    k3.data_mut()[((ky * 2) * 3 + kx * 2) * 6 + c] = k.data()[(ky * 2 + kx) * 6 + c];
                }
            }
        }
        let expected = oracle(&x, &k3, &[0.0; 3], 1, (0, 0), (5, 4));
        assert!(tape.value(y).data().iter().zip(&expected).all(|(a, e)| (a - e).abs() < 1e-12));
    }

    #[test]
    fn channel_mismatch_names_both_shapes() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[1, 4, 4, 2]));
        let k = tape.constant(Tensor::zeros(&[3, 3, 3, 1]));
        let b = tape.constant(Tensor::zeros(&[1]));
        let err = tape.conv2d(x, k, b, ConvGeometry::same()).unwrap_err();
        let msg = alloc::format!("{err}");
        assert!(msg.contains("[1, 4, 4, 2]") && msg.contains("[3, 3, 3, 1]"), "{msg}");
    }

    #[test]
    fn rejects_zero_stride() {
        assert!(ConvGeometry::same().with_stride(0).validate().is_err());
    }
}
