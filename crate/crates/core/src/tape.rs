//! Reverse-mode differentiation record.
//!
//! Every operation in [`crate::ops`] is a method on [`Tape`] that computes
//! its value eagerly, appends a node and returns a [`Var`] handle. Nodes are
//! append-only, so parents always precede their children and a reverse scan
//! from the root is a valid topological order.

use alloc::vec;
use alloc::vec::Vec;

use crate::ops::{activation, attention, conv, linalg, loss, norm, pool};
use crate::{Error, Real, Result, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Reshape(Var),
    Pick(Var, usize),
    MatMul(Var, Var),
    AddRow(Var, Var),
    MeanRows(Var),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        plan: conv::ConvPlan,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Gap(Var),
    AddChannelBias {
        volume: Var,
        bias: Var,
    },
    Activation(Var, activation::Activation),
    Softmax(Var),
    LayerNorm {
        input: Var,
        gain: Var,
        shift: Var,
        normalized: Vec<T>,
        rstd: Vec<T>,
    },
    Attention {
        query: Var,
        key: Var,
        value: Var,
        heads: usize,
        weights: Vec<T>,
        mask: Option<Vec<T>>,
    },
    Nll {
        probs: Var,
        targets: Vec<usize>,
        weight: T,
    },
    Bce {
        probs: Var,
        flags: Vec<bool>,
        weight: T,
    },
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) needs_grad: bool,
}

/// One forward evaluation. A tape is owned by a single evaluation; run
/// concurrent forwards on separate tapes.
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
    inputs_finite: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            inputs_finite: true,
        }
    }

    /// Records a differentiable input (a parameter).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.inputs_finite &= value.all_finite();
        self.push_node(value, Op::Leaf, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.inputs_finite &= value.all_finite();
        self.push_node(value, Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node and saved activation.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.inputs_finite = true;
    }

    pub(crate) fn needs_grad(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    fn push_node(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert!(
            !self.inputs_finite || value.all_finite(),
            "non-finite value produced from finite inputs"
        );
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|&p| self.needs_grad(p));
        self.push_node(value, op, needs_grad)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::shape("add", x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p + q).collect();
        let out = Tensor::new(x.shape(), data)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::shape("mul", x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p * q).collect();
        let out = Tensor::new(x.shape(), data)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let out = self.value(a).map(|x| x * factor);
        self.push(out, Op::Scale(a, factor), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(total), Op::Sum(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(a), &[a]))
    }

    /// Scalar view of one element (flat row-major index).
    pub fn pick(&mut self, a: Var, index: usize) -> Result<Var> {
        let x = self.value(a);
        if index >= x.len() {
            return Err(Error::invalid("pick", "index out of range"));
        }
        let out = Tensor::scalar(x.data()[index]);
        Ok(self.push(out, Op::Pick(a, index), &[a]))
    }

    /// Gradients of the scalar `root` with respect to every node that needs
    /// one.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let root_value = self.value(root);
        if root_value.len() != 1 {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::full(root_value.shape(), T::one()));

        for id in (0..=root.0).rev() {
            let Some(upstream) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            if node.needs_grad {
                self.propagate(node, &upstream, &mut grads);
            }
            grads[id] = Some(upstream);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, up: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let mut acc = |var: Var, f: &dyn Fn(&mut [T])| {
            if !self.needs_grad(var) {
                return;
            }
            let slot = grads[var.0].get_or_insert_with(|| Tensor::zeros(self.shape(var)));
            f(slot.data_mut());
        };
        let dy = up.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &|g| add_into(g, dy));
                acc(*b, &|g| add_into(g, dy));
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &|g| {
                    for ((g, &d), &v) in g.iter_mut().zip(dy).zip(y) {
                        *g += d * v;
                    }
                });
                acc(*b, &|g| {
                    for ((g, &d), &v) in g.iter_mut().zip(dy).zip(x) {
                        *g += d * v;
                    }
                });
            }
            Op::Scale(a, factor) => acc(*a, &|g| {
                for (g, &d) in g.iter_mut().zip(dy) {
                    *g += d * *factor;
                }
            }),
            Op::Sum(a) => acc(*a, &|g| {
                for g in g.iter_mut() {
                    *g += dy[0];
                }
            }),
            Op::Reshape(a) => acc(*a, &|g| add_into(g, dy)),
            Op::Pick(a, index) => acc(*a, &|g| g[*index] += dy[0]),
            Op::MatMul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let (m, k, n) = (x.shape()[0], x.shape()[1], y.shape()[1]);
                acc(*a, &|g| linalg::matmul_grad_lhs(dy, y.data(), g, m, k, n));
                acc(*b, &|g| linalg::matmul_grad_rhs(x.data(), dy, g, m, k, n));
            }
            Op::AddRow(a, b) => {
                acc(*a, &|g| add_into(g, dy));
                let width = self.value(*b).len();
                acc(*b, &|g| {
                    for row in dy.chunks_exact(width) {
                        add_into(g, row);
                    }
                });
            }
            Op::MeanRows(a) => {
                let shape = self.shape(*a);
                let inv = T::one() / T::of(shape[0] as f64);
                acc(*a, &|g| {
                    for row in g.chunks_exact_mut(shape[1]) {
                        for (g, &d) in row.iter_mut().zip(dy) {
                            *g += d * inv;
                        }
                    }
                });
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                plan,
            } => {
                let x = self.value(*input).data();
                let k = self.value(*kernel).data();
                acc(*bias, &|g| conv::bias_grad(plan, dy, g));
                acc(*kernel, &|g| conv::kernel_grad(plan, x, dy, g));
                acc(*input, &|g| conv::input_grad(plan, k, dy, g));
            }
            Op::MaxPool { input, argmax } => acc(*input, &|g| {
                for (&src, &d) in argmax.iter().zip(dy) {
                    g[src] += d;
                }
            }),
            Op::Gap(a) => {
                let shape = self.shape(*a);
                acc(*a, &|g| pool::gap_grad(shape, dy, g));
            }
            Op::AddChannelBias { volume, bias } => {
                acc(*volume, &|g| add_into(g, dy));
                let shape = self.shape(*volume);
                acc(*bias, &|g| pool::channel_bias_grad(shape, dy, g));
            }
            Op::Activation(a, kind) => {
                let x = self.value(*a).data();
                let y = node.value.data();
                acc(*a, &|g| activation::grad(*kind, x, y, dy, g));
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let width = y.shape()[y.rank() - 1];
                acc(*a, &|g| activation::softmax_grad(y.data(), dy, g, width));
            }
            Op::LayerNorm {
                input,
                gain,
                shift,
                normalized,
                rstd,
            } => {
                let gain_value = self.value(*gain).data();
                let width = gain_value.len();
                acc(*shift, &|g| {
                    for row in dy.chunks_exact(width) {
                        add_into(g, row);
                    }
                });
                acc(*gain, &|g| {
                    for (row, xh) in dy.chunks_exact(width).zip(normalized.chunks_exact(width)) {
                        for ((g, &d), &h) in g.iter_mut().zip(row).zip(xh) {
                            *g += d * h;
                        }
                    }
                });
                acc(*input, &|g| norm::input_grad(gain_value, normalized, rstd, dy, g));
            }
            Op::Attention {
                query,
                key,
                value,
                heads,
                weights,
                mask,
            } => {
                let q = self.value(*query);
                let k = self.value(*key).data();
                let v = self.value(*value).data();
                let geom = attention::Geometry::new(q.shape()[0], q.shape()[1], *heads);
                let back = attention::backward(&geom, q.data(), k, v, weights, mask.as_deref(), dy);
                acc(*query, &|g| add_into(g, &back.query));
                acc(*key, &|g| add_into(g, &back.key));
                acc(*value, &|g| add_into(g, &back.value));
            }
            Op::Nll {
                probs,
                targets,
                weight,
            } => {
                let p = self.value(*probs);
                acc(*probs, &|g| loss::nll_grad(p, targets, *weight, dy[0], g));
            }
            Op::Bce {
                probs,
                flags,
                weight,
            } => {
                let p = self.value(*probs).data();
                acc(*probs, &|g| loss::bce_grad(p, flags, *weight, dy[0], g));
            }
        }
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the root with respect to `var`, or `None` when the root
    /// does not depend on it (or `var` was recorded as a constant).
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Like [`Gradients::get`] but materializes zeros for unreached nodes.
    pub fn get_or_zeros(&self, var: Var, shape: &[usize]) -> Tensor<T> {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}
