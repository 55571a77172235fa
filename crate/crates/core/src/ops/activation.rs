use serde::{Deserialize, Serialize};

use crate::tape::Op;
use crate::{Real, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Relu6,
    Sigmoid,
}

impl Activation {
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(T::zero()),
            Activation::Relu6 => x.max(T::zero()).min(T::of(6.0)),
            Activation::Sigmoid => sigmoid(x),
        }
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn grad<T: Real>(kind: Activation, x: &[T], y: &[T], dy: &[T], g: &mut [T]) {
    let zero = T::zero();
    match kind {
        Activation::Identity => {
            for (g, &d) in g.iter_mut().zip(dy) {
                *g += d;
            }
        }
        Activation::Relu => {
            for ((g, &d), &x) in g.iter_mut().zip(dy).zip(x) {
                if x > zero {
                    *g += d;
                }
            }
        }
        Activation::Relu6 => {
            let six = T::of(6.0);
            for ((g, &d), &x) in g.iter_mut().zip(dy).zip(x) {
                if x > zero && x < six {
                    *g += d;
                }
            }
        }
        Activation::Sigmoid => {
            for ((g, &d), &y) in g.iter_mut().zip(dy).zip(y) {
                *g += d * y * (T::one() - y);
            }
        }
    }
}

pub(crate) fn softmax_rows<T: Real>(data: &mut [T], width: usize) {
    for row in data.chunks_exact_mut(width) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
}

pub(crate) fn softmax_grad<T: Real>(y: &[T], dy: &[T], g: &mut [T], width: usize) {
    for ((yr, dr), gr) in y
        .chunks_exact(width)
        .zip(dy.chunks_exact(width))
        .zip(g.chunks_exact_mut(width))
    {
        let dot: T = yr.iter().zip(dr).map(|(&a, &b)| a * b).sum();
        for ((g, &y), &d) in gr.iter_mut().zip(yr).zip(dr) {
            *g += y * (d - dot);
        }
    }
}

impl<T: Real> Tape<T> {
    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let out = self.value(x).map(|v| kind.apply(v));
        self.push(out, Op::Activation(x, kind), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn relu6(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu6)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        let width = out.shape()[out.rank() - 1];
        softmax_rows(out.data_mut(), width);
        self.push(out, Op::Softmax(x), &[x])
    }
}
