use alloc::vec::Vec;

use crate::tape::Op;
use crate::{Error, Real, Result, Tape, Tensor, Var};

fn dims4(op: &'static str, shape: &[usize]) -> Result<[usize; 4]> {
    match shape {
        &[n, h, w, c] => Ok([n, h, w, c]),
        _ => Err(Error::invalid(op, "expected a [N, H, W, C] volume set")),
    }
}

pub(crate) fn gap_grad<T: Real>(shape: &[usize], dy: &[T], g: &mut [T]) {
    let (n, hw, c) = (shape[0], shape[1] * shape[2], shape[3]);
    let inv = T::one() / T::of(hw as f64);
    for i in 0..n {
        let d = &dy[i * c..(i + 1) * c];
        for cell in g[i * hw * c..(i + 1) * hw * c].chunks_exact_mut(c) {
            for (g, &d) in cell.iter_mut().zip(d) {
                *g += d * inv;
            }
        }
    }
}

pub(crate) fn channel_bias_grad<T: Real>(shape: &[usize], dy: &[T], g: &mut [T]) {
    let (n, hw, c) = (shape[0], shape[1] * shape[2], shape[3]);
    for i in 0..n {
        let gi = &mut g[i * c..(i + 1) * c];
        for cell in dy[i * hw * c..(i + 1) * hw * c].chunks_exact(c) {
            for (g, &d) in gi.iter_mut().zip(cell) {
                *g += d;
            }
        }
    }
}

impl<T: Real> Tape<T> {
    /// Non-overlapping `pool x pool` max pooling. Trailing rows and columns
    /// that do not fill a window are dropped; ties resolve to the first cell
    /// in row-major order.
    pub fn maxpool2d(&mut self, input: Var, pool: usize) -> Result<Var> {
        if pool < 1 {
            return Err(Error::invalid("maxpool2d", "pool size must be >= 1"));
        }
        let x = self.value(input);
        let [n, h, w, c] = dims4("maxpool2d", x.shape())?;
        let (oh, ow) = (h / pool, w / pool);
        if oh == 0 || ow == 0 {
            return Err(Error::invalid("maxpool2d", "pool window larger than input"));
        }
        let xd = x.data();
        let mut out = Vec::with_capacity(n * oh * ow * c);
        let mut argmax = Vec::with_capacity(n * oh * ow * c);
        for b in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..c {
                        let mut best_idx = ((b * h + oy * pool) * w + ox * pool) * c + ch;
                        let mut best = xd[best_idx];
                        for dy in 0..pool {
                            for dx in 0..pool {
                                let idx = ((b * h + oy * pool + dy) * w + ox * pool + dx) * c + ch;
                                if xd[idx] > best {
                                    best = xd[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        out.push(best);
                        argmax.push(best_idx);
                    }
                }
            }
        }
        let out = Tensor::new(&[n, oh, ow, c], out)?;
        Ok(self.push(out, Op::MaxPool { input, argmax }, &[input]))
    }

    /// Global average pooling `[N, H, W, C] -> [N, C]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let [n, h, w, c] = dims4("global_avg_pool", x.shape())?;
        let mut out = Tensor::zeros(&[n, c]);
        let inv = T::one() / T::of((h * w) as f64);
        for i in 0..n {
            let o = &mut out.data_mut()[i * c..(i + 1) * c];
            for cell in x.outer(i).chunks_exact(c) {
                for (o, &v) in o.iter_mut().zip(cell) {
                    *o += v;
                }
            }
            for o in o.iter_mut() {
                *o *= inv;
            }
        }
        Ok(self.push(out, Op::Gap(input), &[input]))
    }

    /// Adds member `i`'s bias vector `[N, C]` at every spatial position of
    /// member `i`'s volume `[N, H, W, C]`.
    pub fn add_channel_bias(&mut self, volume: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.value(volume), self.value(bias));
        let [n, h, w, c] = dims4("add_channel_bias", x.shape())?;
        if b.shape() != [n, c] {
            return Err(Error::shape("add_channel_bias", x.shape(), b.shape()));
        }
        let mut out = x.clone();
        let hw = h * w;
        for i in 0..n {
            let bi = b.outer(i);
            for cell in out.data_mut()[i * hw * c..(i + 1) * hw * c].chunks_exact_mut(c) {
                for (o, &v) in cell.iter_mut().zip(bi) {
                    *o += v;
                }
            }
        }
        Ok(self.push(out, Op::AddChannelBias { volume, bias }, &[volume, bias]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn maxpool_examples() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::from_f64(&[1, 2, 2, 1], &[1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = tape.maxpool2d(x, 2).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0]);

        let c = tape.constant(Tensor::full(&[1, 4, 4, 2], 1.5));
        let y = tape.maxpool2d(c, 2).unwrap();
        assert_eq!(tape.value(y), &Tensor::full(&[1, 2, 2, 2], 1.5));
        assert!(tape.maxpool2d(c, 0).is_err());
    }

    #[test]
    fn maxpool_matches_window_oracle_and_drops_remainder() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (h, w) in [(6, 6), (7, 5)] {
            let data: Vec<f64> = (0..h * w * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = Tensor::new(&[1, h, w, 2], data).unwrap();
            let mut tape = Tape::<f64>::new();
            let xv = tape.constant(x.clone());
            let y = tape.maxpool2d(xv, 2).unwrap();
            let (oh, ow) = (h / 2, w / 2);
            assert_eq!(tape.shape(y), &[1, oh, ow, 2]);
            for oy in 0..oh {
                for ox in 0..ow {
                    for c in 0..2 {
                        let mut best = f64::NEG_INFINITY;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                best = best.max(x.data()[((oy * 2 + dy) * w + ox * 2 + dx) * 2 + c]);
                            }
                        }
                        assert_eq!(tape.value(y).data()[(oy * ow + ox) * 2 + c], best);
                    }
                }
            }
        }
    }

    #[test]
    fn maxpool_ties_route_to_first_cell() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[1, 2, 2, 1], 3.0));
        let y = tape.maxpool2d(x, 2).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn gap_examples() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64(&[1, 2, 2, 1], &[1.0, 2.0, 3.0, 6.0]).unwrap());
        let y = tape.global_avg_pool(x).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0]);

        let v = tape.constant(Tensor::from_f64(&[1, 1, 1, 3], &[0.5, -2.0, 7.0]).unwrap());
        let y = tape.global_avg_pool(v).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, -2.0, 7.0]);
    }

    #[test]
    fn gap_matches_summation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<f32> = (0..5 * 7 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Tensor::new(&[1, 5, 7, 3], data).unwrap();
        let mut tape = Tape::<f32>::new();
        let xv = tape.constant(x.clone());
        let y = tape.global_avg_pool(xv).unwrap();
        for c in 0..3 {
            let mut s = 0.0f64;
            for p in 0..35 {
                s += x.data()[p * 3 + c] as f64;
            }
            assert!((tape.value(y).data()[c] as f64 - s / 35.0).abs() < 1e-6);
        }
    }
}
