//! Dynamic reverse-mode tape.
//!
//! Nodes are appended in creation order, so reverse index order is a valid
//! topological order for the backward sweep and every node is visited once.

use std::collections::HashMap;

use super::params::ParameterStore;
use super::tensor::{
    broadcast_index_map, broadcast_shape, matmul_acc, matmul_acc_at, matmul_acc_bt, Tensor,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum UnaryKind {
    Neg,
    Relu,
    Elu,
    Sigmoid,
    Tanh,
    Abs,
    Square,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Binary {
        kind: BinaryKind,
        a: Var,
        b: Var,
        // None when the operand already has the output shape.
        map_a: Option<Vec<usize>>,
        map_b: Option<Vec<usize>>,
    },
    Unary(UnaryKind, Var),
    Scale(Var, T),
    Identity(Var),
    Sum(Var),
    SumAxis {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Maximum(Var, Var),
    Clip {
        x: Var,
        lo: Var,
        hi: Var,
    },
    Concat {
        inputs: Vec<Var>,
        outer: usize,
        widths: Vec<usize>,
    },
    Slice {
        x: Var,
        outer: usize,
        src_width: usize,
        start: usize,
        width: usize,
    },
    Gather {
        x: Var,
        cols: usize,
        idx: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A computation graph built during one forward pass.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    param_cache: HashMap<(u64, String, bool), Var>,
    trainable: Vec<(u64, String, Var)>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            param_cache: HashMap::new(),
            trainable: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient of the last backward root with respect to `v`, if any reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// A constant input (no gradient).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A free leaf that receives a gradient (used by gradient checks).
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Trainable parameter leaf. Repeated calls with the same store and name
    /// return the same node.
    pub fn param(&mut self, store: &ParameterStore<T>, name: &str) -> Result<Var> {
        self.bind(store, name, true)
    }

    /// Parameter leaf that never receives a gradient (target networks).
    pub fn frozen_param(&mut self, store: &ParameterStore<T>, name: &str) -> Result<Var> {
        self.bind(store, name, false)
    }

    fn bind(&mut self, store: &ParameterStore<T>, name: &str, trainable: bool) -> Result<Var> {
        let key = (store.id(), name.to_string(), trainable);
        if let Some(&v) = self.param_cache.get(&key) {
            return Ok(v);
        }
        let value = store.value(name)?.clone();
        let v = self.push(value, Op::Leaf, trainable);
        if trainable {
            self.trainable.push((store.id(), name.to_string(), v));
        }
        self.param_cache.insert(key, v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        matmul_acc(self.data(a), self.data(b), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let name = match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
        };
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(name, &sa, &sb)?;
        let map_a = (sa != out_shape).then(|| broadcast_index_map(&out_shape, &sa));
        let map_b = (sb != out_shape).then(|| broadcast_index_map(&out_shape, &sb));
        let f = |x: T, y: T| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
        };
        let (da, db) = (self.data(a), self.data(b));
        let numel: usize = out_shape.iter().product();
        let out: Vec<T> = match (&map_a, &map_b) {
            (None, None) => da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect(),
            _ => (0..numel)
                .map(|k| {
                    let ia = map_a.as_ref().map_or(k, |m| m[k]);
                    let ib = map_b.as_ref().map_or(k, |m| m[k]);
                    f(da[ia], db[ib])
                })
                .collect(),
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::new(out_shape, out)?,
            Op::Binary {
                kind,
                a,
                b,
                map_a,
                map_b,
            },
            rg,
        ))
    }

    /// Elementwise sum with broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    /// Elementwise product with broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    fn unary(&mut self, kind: UnaryKind, x: Var) -> Var {
        let f = |v: T| match kind {
            UnaryKind::Neg => -v,
            UnaryKind::Relu => v.max(T::zero()),
            UnaryKind::Elu => {
                if v > T::zero() {
                    v
                } else {
                    v.exp() - T::one()
                }
            }
            UnaryKind::Sigmoid => T::one() / (T::one() + (-v).exp()),
            UnaryKind::Tanh => v.tanh(),
            UnaryKind::Abs => v.abs(),
            UnaryKind::Square => v * v,
        };
        let value = self.value(x).map(f);
        let rg = self.rg(x);
        self.push(value, Op::Unary(kind, x), rg)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Neg, x)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Relu, x)
    }

    /// ELU with alpha = 1.
    pub fn elu(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Elu, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Tanh, x)
    }

    /// Absolute value; subgradient 0 at exactly 0.
    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Abs, x)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Square, x)
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let value = self.value(x).map(|v| v * factor);
        let rg = self.rg(x);
        self.push(value, Op::Scale(x, factor), rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| v + c);
        let rg = self.rg(x);
        self.push(value, Op::Identity(x), rg)
    }

    /// `c - x`
    pub fn rsub_scalar(&mut self, c: T, x: Var) -> Var {
        let n = self.neg(x);
        self.add_scalar(n, c)
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Identity(x), rg))
    }

    /// Passes the value through and blocks the gradient.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.push(value, Op::Leaf, false)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.data(x).iter().copied().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel().max(1);
        let s = self.sum(x);
        self.scale(s, T::one() / T::from_usize(n).unwrap())
    }

    /// Sum over one axis, dropping it.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::invalid("sum_axis", format!("axis {axis} for shape {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.data(x);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                let dst = &mut out[o * inner..(o + 1) * inner];
                for (d, &s) in dst.iter_mut().zip(&src[base..base + inner]) {
                    *d += s;
                }
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(out_shape, out)?,
            Op::SumAxis {
                x,
                outer,
                len,
                inner,
            },
            rg,
        ))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let len = *self
            .shape(x)
            .get(axis)
            .ok_or_else(|| Error::invalid("mean_axis", format!("axis {axis}")))?;
        let s = self.sum_axis(x, axis)?;
        Ok(self.scale(s, T::one() / T::from_usize(len.max(1)).unwrap()))
    }

    /// Elementwise maximum of two same-shape tensors; ties send the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("maximum", self.shape(a), self.shape(b)));
        }
        let out: Vec<T> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| if x >= y { x } else { y })
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Maximum(a, b), rg))
    }

    /// Clamp `x` into `[lo, hi]` elementwise. Where the input sits strictly
    /// inside the interval the gradient flows to `x`; where it is clamped
    /// (including exactly at a bound) it flows to the active bound instead.
    pub fn clip(&mut self, x: Var, lo: Var, hi: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        for other in [lo, hi] {
            if self.shape(other) != shape.as_slice() {
                return Err(Error::shape("clip", &shape, self.shape(other)));
            }
        }
        let (dx, dl, dh) = (self.data(x), self.data(lo), self.data(hi));
        let mut out = Vec::with_capacity(dx.len());
        for i in 0..dx.len() {
            if dl[i] > dh[i] {
                return Err(Error::ClipBounds {
                    lo: dl[i].to_f64_lossy(),
                    hi: dh[i].to_f64_lossy(),
                    index: i,
                });
            }
            out.push(if dx[i] <= dl[i] {
                dl[i]
            } else if dx[i] >= dh[i] {
                dh[i]
            } else {
                dx[i]
            });
        }
        let rg = self.rg(x) || self.rg(lo) || self.rg(hi);
        Ok(self.push(Tensor::new(shape, out)?, Op::Clip { x, lo, hi }, rg))
    }

    /// Concatenate along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::invalid("concat", format!("axis {axis} for shape {base:?}")));
        }
        let mut widths = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            widths.push(s[axis..].iter().product::<usize>());
        }
        let outer: usize = base[..axis].iter().product();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (&v, &w) in inputs.iter().zip(&widths) {
                out.extend_from_slice(&self.data(v)[o * w..(o + 1) * w]);
            }
        }
        let mut shape = base.clone();
        shape[axis] = inputs.iter().map(|&v| self.shape(v)[axis]).sum();
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                outer,
                widths,
            },
            rg,
        ))
    }

    /// Take `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::invalid(
                "slice",
                format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src_width = shape[axis] * inner;
        let width = len * inner;
        let src = self.data(x);
        let mut out = Vec::with_capacity(outer * width);
        for o in 0..outer {
            let b = o * src_width + start * inner;
            out.extend_from_slice(&src[b..b + width]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(out_shape, out)?,
            Op::Slice {
                x,
                outer,
                src_width,
                start: start * inner,
                width,
            },
            rg,
        ))
    }

    /// `out[r] = x[r, idx[r]]` for a 2-D `x`.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 || shape[0] != idx.len() {
            return Err(Error::shape("gather", &shape, &[idx.len()]));
        }
        let cols = shape[1];
        if let Some(&bad) = idx.iter().find(|&&i| i >= cols) {
            return Err(Error::invalid("gather", format!("index {bad} >= {cols}")));
        }
        let src = self.data(x);
        let out: Vec<T> = idx.iter().enumerate().map(|(r, &c)| src[r * cols + c]).collect();
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![idx.len()], out)?,
            Op::Gather {
                x,
                cols,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse sweep from a one-element root. Gradients of earlier sweeps are
    /// discarded; use [`Graph::accumulate_param_grads`] to fold them into a store.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).numel() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("root must be a scalar, got shape {:?}", self.shape(root)),
            ));
        }
        let n = self.nodes.len();
        self.grads = vec![None; n];
        if !self.rg(root) {
            return Ok(());
        }
        self.grads[root.0] = Some(vec![T::one()]);
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, g: &[T]) {
        // Split borrow: `op` is only read; gradients go to `self.grads`.
        let nodes = std::mem::take(&mut self.nodes);
        let node = &nodes[i];
        {
            let mut acc = |target: Var, f: &mut dyn FnMut(&mut [T])| {
                if !nodes[target.0].requires_grad {
                    return;
                }
                let numel = nodes[target.0].value.numel();
                let slot = self.grads[target.0].get_or_insert_with(|| vec![T::zero(); numel]);
                f(slot);
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (sa, sb) = (nodes[a.0].value.shape(), nodes[b.0].value.shape());
                    let (m, k, n) = (sa[0], sa[1], sb[1]);
                    let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    acc(*a, &mut |ga| matmul_acc_bt(g, vb, ga, m, k, n));
                    acc(*b, &mut |gb| matmul_acc_at(va, g, gb, m, k, n));
                }
                Op::Binary {
                    kind,
                    a,
                    b,
                    map_a,
                    map_b,
                } => {
                    let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    let ia = |k: usize| map_a.as_ref().map_or(k, |m| m[k]);
                    let ib = |k: usize| map_b.as_ref().map_or(k, |m| m[k]);
                    acc(*a, &mut |ga| {
                        for (k, &gk) in g.iter().enumerate() {
                            ga[ia(k)] += match kind {
                                BinaryKind::Add | BinaryKind::Sub => gk,
                                BinaryKind::Mul => gk * vb[ib(k)],
                            };
                        }
                    });
                    acc(*b, &mut |gb| {
                        for (k, &gk) in g.iter().enumerate() {
                            gb[ib(k)] += match kind {
                                BinaryKind::Add => gk,
                                BinaryKind::Sub => -gk,
                                BinaryKind::Mul => gk * va[ia(k)],
                            };
                        }
                    });
                }
                Op::Unary(kind, x) => {
                    let vx = nodes[x.0].value.data();
                    let out = node.value.data();
                    acc(*x, &mut |gx| {
                        for k in 0..g.len() {
                            let d = match kind {
                                UnaryKind::Neg => -T::one(),
                                UnaryKind::Relu => {
                                    if vx[k] > T::zero() {
                                        T::one()
                                    } else {
                                        T::zero()
                                    }
                                }
                                UnaryKind::Elu => {
                                    if vx[k] > T::zero() {
                                        T::one()
                                    } else {
                                        out[k] + T::one()
                                    }
                                }
                                UnaryKind::Sigmoid => out[k] * (T::one() - out[k]),
                                UnaryKind::Tanh => T::one() - out[k] * out[k],
                                UnaryKind::Abs => {
                                    if vx[k] > T::zero() {
                                        T::one()
                                    } else if vx[k] < T::zero() {
                                        -T::one()
                                    } else {
                                        T::zero()
                                    }
                                }
                                UnaryKind::Square => vx[k] + vx[k],
                            };
                            gx[k] += g[k] * d;
                        }
                    });
                }
                Op::Scale(x, c) => acc(*x, &mut |gx| {
                    for (d, &s) in gx.iter_mut().zip(g) {
                        *d += s * *c;
                    }
                }),
                Op::Identity(x) => acc(*x, &mut |gx| {
                    for (d, &s) in gx.iter_mut().zip(g) {
                        *d += s;
                    }
                }),
                Op::Sum(x) => acc(*x, &mut |gx| {
                    for d in gx.iter_mut() {
                        *d += g[0];
                    }
                }),
                Op::SumAxis {
                    x,
                    outer,
                    len,
                    inner,
                } => acc(*x, &mut |gx| {
                    for o in 0..*outer {
                        let src = &g[o * inner..(o + 1) * inner];
                        for l in 0..*len {
                            let base = (o * len + l) * inner;
                            for (d, &s) in gx[base..base + inner].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                }),
                Op::Maximum(a, b) => {
                    let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    acc(*a, &mut |ga| {
                        for k in 0..g.len() {
                            if va[k] >= vb[k] {
                                ga[k] += g[k];
                            }
                        }
                    });
                    acc(*b, &mut |gb| {
                        for k in 0..g.len() {
                            if va[k] < vb[k] {
                                gb[k] += g[k];
                            }
                        }
                    });
                }
                Op::Clip { x, lo, hi } => {
                    let vx = nodes[x.0].value.data();
                    let (vl, vh) = (nodes[lo.0].value.data(), nodes[hi.0].value.data());
                    acc(*x, &mut |gx| {
                        for k in 0..g.len() {
                            if vx[k] > vl[k] && vx[k] < vh[k] {
                                gx[k] += g[k];
                            }
                        }
                    });
                    acc(*lo, &mut |gl| {
                        for k in 0..g.len() {
                            if vx[k] <= vl[k] {
                                gl[k] += g[k];
                            }
                        }
                    });
                    acc(*hi, &mut |gh| {
                        for k in 0..g.len() {
                            if vx[k] > vl[k] && vx[k] >= vh[k] {
                                gh[k] += g[k];
                            }
                        }
                    });
                }
                Op::Concat {
                    inputs,
                    outer,
                    widths,
                } => {
                    let total: usize = widths.iter().sum();
                    let mut offset = 0;
                    for (&v, &w) in inputs.iter().zip(widths) {
                        acc(v, &mut |gv| {
                            for o in 0..*outer {
                                let src = &g[o * total + offset..o * total + offset + w];
                                for (d, &s) in gv[o * w..(o + 1) * w].iter_mut().zip(src) {
                                    *d += s;
                                }
                            }
                        });
                        offset += w;
                    }
                }
                Op::Slice {
                    x,
                    outer,
                    src_width,
                    start,
                    width,
                } => acc(*x, &mut |gx| {
                    for o in 0..*outer {
                        let b = o * src_width + start;
                        for (d, &s) in gx[b..b + width]
                            .iter_mut()
                            .zip(&g[o * width..(o + 1) * width])
                        {
                            *d += s;
                        }
                    }
                }),
                Op::Gather { x, cols, idx } => acc(*x, &mut |gx| {
                    for (r, &c) in idx.iter().enumerate() {
                        gx[r * cols + c] += g[r];
                    }
                }),
            }
        }
        self.nodes = nodes;
    }

    /// Add the gradients of trainable leaves bound from `store` into the
    /// store's gradient buffers.
    pub fn accumulate_param_grads(&self, store: &mut ParameterStore<T>) -> Result<()> {
        for (id, name, v) in &self.trainable {
            if *id != store.id() {
                continue;
            }
            if let Some(g) = self.grad(*v) {
                store.add_grad(name, g)?;
            }
        }
        Ok(())
    }

    /// Names and nodes of trainable parameters bound in this graph.
    pub fn trainable_params(&self) -> impl Iterator<Item = (&str, Var)> {
        self.trainable.iter().map(|(_, n, v)| (n.as_str(), *v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: f64) -> Tensor<f64> {
        Tensor::scalar(v)
    }

    #[test]
    fn clip_clamped_upper_has_zero_grad() {
        let mut g = Graph::new();
        let x = g.variable(s(5.0));
        let lo = g.constant(s(1.0));
        let hi = g.constant(s(3.0));
        let y = g.clip(x, lo, hi).unwrap();
        assert_eq!(g.value(y).item(), 3.0);
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0]);
    }

    #[test]
    fn clip_inside_passes_grad_and_bounds_get_none() {
        let mut g = Graph::new();
        let x = g.variable(s(2.0));
        let lo = g.variable(s(1.0));
        let hi = g.variable(s(3.0));
        let y = g.clip(x, lo, hi).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0]);
        assert_eq!(g.grad(lo).unwrap_or(&[0.0]), &[0.0]);
        assert_eq!(g.grad(hi).unwrap_or(&[0.0]), &[0.0]);
    }

    #[test]
    fn clip_at_exact_bound_is_clamped() {
        let mut g = Graph::new();
        let x = g.variable(s(1.0));
        let lo = g.variable(s(1.0));
        let hi = g.constant(s(3.0));
        let y = g.clip(x, lo, hi).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0]);
        assert_eq!(g.grad(lo).unwrap(), &[1.0]);
    }

    #[test]
    fn clip_rejects_inverted_bounds() {
        let mut g = Graph::new();
        let x = g.variable(s(2.0));
        let lo = g.constant(s(3.0));
        let hi = g.constant(s(1.0));
        assert!(matches!(g.clip(x, lo, hi), Err(Error::ClipBounds { .. })));
    }

    #[test]
    fn abs_sign_rule_and_zero_subgradient() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::from_vec(vec![-2.0, 0.0, 3.0]));
        let y = g.abs(x);
        assert_eq!(g.data(y), &[2.0, 0.0, 3.0]);
        let root = g.sum(y);
        g.backward(root).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn detach_forwards_value_blocks_grad() {
        let mut g = Graph::new();
        let x = g.variable(s(7.0));
        let d = g.detach(x);
        assert_eq!(g.value(d).item(), 7.0);
        let y = g.mul(d, x).unwrap();
        g.backward(y).unwrap();
        // only the live factor contributes: d(d*x)/dx with d constant = 7
        assert_eq!(g.grad(x).unwrap(), &[7.0]);
    }

    #[test]
    fn shape_error_names_both_shapes() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let b = g.constant(Tensor::zeros(vec![2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
        let c = g.constant(Tensor::zeros(vec![4]));
        let err = g.add(a, c).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[4]"), "{err}");
    }

    #[test]
    fn broadcast_add_reduces_grad() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = g.variable(Tensor::from_vec(vec![10.0, 20.0]));
        let y = g.add(x, b).unwrap();
        assert_eq!(g.data(y), &[11.0, 22.0, 13.0, 24.0]);
        let root = g.sum(y);
        g.backward(root).unwrap();
        assert_eq!(g.grad(b).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn shared_subexpression_accumulates() {
        let mut g = Graph::new();
        let x = g.variable(s(3.0));
        let y = g.mul(x, x).unwrap();
        let z = g.add(y, x).unwrap();
        g.backward(z).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[7.0]);
    }

    #[test]
    fn concat_slice_gather_roundtrip() {
        let mut g = Graph::new();
        let a = g.variable(Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap());
        let b = g.variable(Tensor::new(vec![2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap());
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.data(c), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let sl = g.slice(c, 1, 1, 2).unwrap();
        assert_eq!(g.data(sl), &[3.0, 4.0, 5.0, 6.0]);
        let ga = g.gather(c, &[2, 0]).unwrap();
        assert_eq!(g.data(ga), &[4.0, 2.0]);
        let root = g.sum(ga);
        g.backward(root).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[0.0, 1.0]);
        assert_eq!(g.grad(b).unwrap(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(Tensor::zeros(vec![2]));
        assert!(g.backward(x).is_err());
    }
}
