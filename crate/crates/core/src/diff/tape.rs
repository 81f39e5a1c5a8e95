//! Wengert-list reverse-mode differentiation.
//!
//! Every primitive appends one record holding its output value and whatever
//! it needs for the vector-Jacobian product. `backward` walks the records in
//! reverse exactly once.

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

use super::tensor::{broadcast_shapes, broadcast_strides, collapse, for_each_offset, numel, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Softplus,
    Gelu,
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Act(Var, Activation),
    Abs(Var),
    MatMul(Var, Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Expand(Var),
    Concat(Vec<Var>),
    SumAxis(Var, usize),
    SumAll(Var),
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, rstd: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Single-owner recording of one forward computation.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`; zeros when the loss does not depend on it.
    pub fn wrt(&self, var: Var) -> Tensor<T> {
        match self.get(var) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }

    pub fn take(&mut self, var: Var) -> Tensor<T> {
        match self.grads.get_mut(var.0).and_then(Option::take) {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Scalar>(x: T) -> T {
    // log(1 + e^x) = max(x, 0) + log1p(e^{-|x|})
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn gelu<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    half * x * (T::one() + (x * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    let cdf = half * (T::one() + (x * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-half * x * x).exp() * T::lit(0.398_942_280_401_432_7);
    cdf + x * pdf
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Softplus => softplus(x),
            Activation::Gelu => gelu(x),
        }
    }

    fn derivative<T: Scalar>(self, x: T, y: T) -> T {
        match self {
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Softplus => sigmoid(x),
            Activation::Gelu => gelu_grad(x),
        }
    }
}

/// Joint row-major walk over a broadcast output, yielding input offsets.
fn for_each_offset2(shape: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize)) {
    let (shape, [sa, sb]) = collapse(shape, [sa, sb]);
    let rank = shape.len();
    if rank == 0 {
        f(0, 0);
        return;
    }
    let inner = shape[rank - 1];
    let (ia_step, ib_step) = (sa[rank - 1], sb[rank - 1]);
    let outer = numel(&shape[..rank - 1]);
    let mut idx = vec![0usize; rank - 1];
    let (mut base_a, mut base_b) = (0usize, 0usize);
    for _ in 0..outer {
        let (mut ia, mut ib) = (base_a, base_b);
        for _ in 0..inner {
            f(ia, ib);
            ia += ia_step;
            ib += ib_step;
        }
        for ax in (0..rank - 1).rev() {
            idx[ax] += 1;
            base_a += sa[ax];
            base_b += sb[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            base_a -= sa[ax] * shape[ax];
            base_b -= sb[ax] * shape[ax];
            idx[ax] = 0;
        }
    }
}

fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize, Vec<usize>)> {
    if a.len() < 2 || b.len() < 2 {
        return Err(shape_err!("matmul needs rank >= 2 operands, got {a:?} x {b:?}"));
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != k2 {
        return Err(shape_err!("matmul inner extents differ: {a:?} x {b:?}"));
    }
    let batch = broadcast_shapes(&a[..a.len() - 2], &b[..b.len() - 2])?;
    Ok((m, k, n, batch))
}

/// Per-batch matrix offsets (in elements) for each operand of a broadcast matmul.
fn batch_offsets(batch: &[usize], a: &[usize], b: &[usize], msize_a: usize, msize_b: usize) -> Vec<(usize, usize)> {
    let sa: Vec<usize> = broadcast_strides(&a[..a.len() - 2], batch).iter().map(|s| s * msize_a).collect();
    let sb: Vec<usize> = broadcast_strides(&b[..b.len() - 2], batch).iter().map(|s| s * msize_b).collect();
    let mut out = Vec::with_capacity(numel(batch));
    if batch.is_empty() {
        out.push((0, 0));
    } else {
        for_each_offset2(batch, &sa, &sb, |oa, ob| out.push((oa, ob)));
    }
    out
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    fn push_raw(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        if cfg!(debug_assertions) && !value.all_finite() {
            let inputs_finite = inputs.iter().all(|v| self.nodes[v.0].value.all_finite());
            debug_assert!(!inputs_finite, "primitive produced non-finite output from finite inputs");
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push_raw(value, op, needs_grad)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            return Tensor::new(ta.shape().to_vec(), data);
        }
        let out_shape = broadcast_shapes(ta.shape(), tb.shape())?;
        let sa = broadcast_strides(ta.shape(), &out_shape);
        let sb = broadcast_strides(tb.shape(), &out_shape);
        let (da, db) = (ta.data(), tb.data());
        let mut out = Vec::with_capacity(numel(&out_shape));
        for_each_offset2(&out_shape, &sa, &sb, |ia, ib| out.push(f(da[ia], db[ib])));
        Tensor::new(out_shape, out)
    }

    /// Broadcasting elementwise sum.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c), &[a])
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Var {
        let v = self.value(a).map(|x| kind.apply(x));
        self.push(v, Op::Act(a, kind), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Sigmoid)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Softplus)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Gelu)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(T::abs);
        self.push(v, Op::Abs(a), &[a])
    }

    /// Batched matrix product over the last two axes with broadcast batch axes.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n, batch) = matmul_dims(ta.shape(), tb.shape())?;
        let mut out_shape = batch.clone();
        out_shape.extend([m, n]);
        let mut out = vec![T::zero(); numel(&out_shape)];
        if tb.rank() == 2 {
            let rows = ta.len() / k;
            T::gemm(rows, k, n, T::one(), ta.data(), k as isize, 1, tb.data(), n as isize, 1, T::zero(), &mut out, n as isize, 1);
        } else {
            let offsets = batch_offsets(&batch, ta.shape(), tb.shape(), m * k, k * n);
            for (bi, (oa, ob)) in offsets.into_iter().enumerate() {
                T::gemm(
                    m,
                    k,
                    n,
                    T::one(),
                    &ta.data()[oa..oa + m * k],
                    k as isize,
                    1,
                    &tb.data()[ob..ob + k * n],
                    n as isize,
                    1,
                    T::zero(),
                    &mut out[bi * m * n..(bi + 1) * m * n],
                    n as isize,
                    1,
                );
            }
        }
        let v = Tensor::new(out_shape, out)?;
        Ok(self.push(v, Op::MatMul(a, b), &[a, b]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        Ok(self.push(v, Op::Reshape(a), &[a]))
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let v = self.value(a).permute(axes)?;
        Ok(self.push(v, Op::Permute(a, axes.to_vec()), &[a]))
    }

    /// Swaps the last two axes.
    pub fn transpose_last2(&mut self, a: Var) -> Result<Var> {
        let r = self.value(a).rank();
        if r < 2 {
            return Err(shape_err!("transpose needs rank >= 2"));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(a, &axes)
    }

    /// Broadcasts `a` to `shape`.
    pub fn expand(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        if broadcast_shapes(ta.shape(), shape)? != shape {
            return Err(shape_err!("cannot expand {:?} to {shape:?}", ta.shape()));
        }
        let s = broadcast_strides(ta.shape(), shape);
        let mut out = Vec::with_capacity(numel(shape));
        let d = ta.data();
        for_each_offset(shape, &s, |o| out.push(d[o]));
        let v = Tensor::new(shape.to_vec(), out)?;
        Ok(self.push(v, Op::Expand(a), &[a]))
    }

    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::concat_last(&tensors)?;
        Ok(self.push(v, Op::Concat(parts.to_vec()), parts))
    }

    /// Sums out one axis (the axis is removed).
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ta = self.value(a);
        if axis >= ta.rank() || ta.rank() == 1 {
            return Err(shape_err!("sum_axis({axis}) on shape {:?}", ta.shape()));
        }
        let shape = ta.shape();
        let (pre, ext, post) = (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]));
        let mut out = vec![T::zero(); pre * post];
        let d = ta.data();
        for p in 0..pre {
            for e in 0..ext {
                let src = &d[(p * ext + e) * post..(p * ext + e + 1) * post];
                for (o, &x) in out[p * post..(p + 1) * post].iter_mut().zip(src) {
                    *o += x;
                }
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        let v = Tensor::new(out_shape, out)?;
        Ok(self.push(v, Op::SumAxis(a, axis), &[a]))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::SumAll(a), &[a])
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = T::from_usize(self.value(a).len()).unwrap();
        let s = self.sum_all(a);
        self.scale(s, T::one() / n)
    }

    /// Mean absolute error against a constant target.
    pub fn mae(&mut self, pred: Var, target: Var) -> Result<Var> {
        let diff = self.sub(pred, target)?;
        let a = self.abs(diff);
        Ok(self.mean_all(a))
    }

    /// Softmax over the last axis. Entries where `support` is false receive
    /// exactly zero probability and zero gradient.
    pub fn softmax_last(&mut self, a: Var, support: Option<&[bool]>) -> Result<Var> {
        let ta = self.value(a);
        if let Some(s) = support {
            if s.len() != ta.len() {
                return Err(shape_err!("support has {} entries for {} logits", s.len(), ta.len()));
            }
        }
        let width = *ta.shape().last().unwrap();
        let d = ta.data();
        let mut out = vec![T::zero(); d.len()];
        for (row, (x, y)) in d.chunks(width).zip(out.chunks_mut(width)).enumerate() {
            let keep = |j: usize| support.map_or(true, |s| s[row * width + j]);
            let mut mx = T::neg_infinity();
            for (j, &v) in x.iter().enumerate() {
                if keep(j) && v > mx {
                    mx = v;
                }
            }
            if mx == T::neg_infinity() {
                if (0..width).any(keep) {
                    // every supported logit is -inf; treat uniformly
                    mx = T::zero();
                } else {
                    return Err(Error::InvalidSupport { row });
                }
            }
            let mut total = T::zero();
            for j in 0..width {
                if keep(j) {
                    y[j] = (x[j] - mx).exp();
                    total += y[j];
                }
            }
            for v in y.iter_mut() {
                *v /= total;
            }
        }
        let v = Tensor::new(ta.shape().to_vec(), out)?;
        Ok(self.push(v, Op::Softmax(a), &[a]))
    }

    /// Normalizes each last-axis slice to zero mean and unit population
    /// variance, then applies `gain` and `bias`.
    pub fn layer_norm_last(&mut self, a: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let ta = self.value(a);
        let width = *ta.shape().last().unwrap();
        if self.value(gain).len() != width || self.value(bias).len() != width {
            return Err(shape_err!("layer norm affine extents must equal {width}"));
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let wn = T::from_usize(width).unwrap();
        let rows = ta.len() / width;
        let mut xhat = vec![T::zero(); ta.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); ta.len()];
        for (r, x) in ta.data().chunks(width).enumerate() {
            let mean = x.iter().copied().sum::<T>() / wn;
            let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / wn;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..width {
                let h = (x[j] - mean) * rs;
                xhat[r * width + j] = h;
                out[r * width + j] = h * g[j] + b[j];
            }
        }
        let v = Tensor::new(ta.shape().to_vec(), out)?;
        Ok(self.push(v, Op::LayerNorm { x: a, gain, bias, xhat, rstd }, &[a, gain, bias]))
    }

    /// Reverse sweep from a scalar `loss`. A tape can be swept only once.
    pub fn backward(&mut self, loss: Var) -> Result<Grads<T>> {
        if self.consumed {
            return Err(Error::Backward("tape already consumed".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Backward(format!("loss must be scalar, got shape {:?}", self.shape(loss))));
        }
        self.consumed = true;
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].needs_grad {
                continue;
            }
            let node = &self.nodes[id];
            if let Op::Leaf = node.op {
                grads[id] = Some(g);
                continue;
            }
            self.propagate(id, &g, &mut grads)?;
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| match (g, &node.op) {
                (Some(g), Op::Leaf) => Some(Tensor::new(node.value.shape().to_vec(), g).expect("grad shape")),
                _ => None,
            })
            .collect();
        Ok(Grads { grads, shapes })
    }

    fn propagate(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[id];
        let out_shape = node.value.shape();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -T::one() } else { T::one() };
                self.reduce_broadcast(*a, out_shape, grads, |o| g[o]);
                self.reduce_broadcast(*b, out_shape, grads, |o| sign * g[o]);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let sa = broadcast_strides(ta.shape(), out_shape);
                let sb = broadcast_strides(tb.shape(), out_shape);
                let (da, db) = (ta.data(), tb.data());
                self.accumulate(*a, grads, |dst| {
                    let mut o = 0;
                    for_each_offset2(out_shape, &sa, &sb, |ia, ib| {
                        dst[ia] += g[o] * db[ib];
                        o += 1;
                    });
                });
                self.accumulate(*b, grads, |dst| {
                    let mut o = 0;
                    for_each_offset2(out_shape, &sa, &sb, |ia, ib| {
                        dst[ib] += g[o] * da[ia];
                        o += 1;
                    });
                });
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.accumulate(*a, grads, |dst| dst.iter_mut().zip(g).for_each(|(d, &x)| *d += x * c));
            }
            Op::Act(a, kind) => {
                let x = self.value(*a).data();
                let y = node.value.data();
                self.accumulate(*a, grads, |dst| {
                    for i in 0..dst.len() {
                        dst[i] += g[i] * kind.derivative(x[i], y[i]);
                    }
                });
            }
            Op::Abs(a) => {
                let x = self.value(*a).data();
                self.accumulate(*a, grads, |dst| {
                    for i in 0..dst.len() {
                        let s = if x[i] > T::zero() {
                            T::one()
                        } else if x[i] < T::zero() {
                            -T::one()
                        } else {
                            T::zero()
                        };
                        dst[i] += g[i] * s;
                    }
                });
            }
            Op::MatMul(a, b) => self.matmul_backward(*a, *b, g, grads)?,
            Op::Reshape(a) => {
                self.accumulate(*a, grads, |dst| dst.iter_mut().zip(g).for_each(|(d, &x)| *d += x));
            }
            Op::Permute(a, axes) => {
                let mut inverse = vec![0; axes.len()];
                for (k, &ax) in axes.iter().enumerate() {
                    inverse[ax] = k;
                }
                let gt = Tensor::new(out_shape.to_vec(), g.to_vec())?.permute(&inverse)?;
                self.accumulate(*a, grads, |dst| dst.iter_mut().zip(gt.data()).for_each(|(d, &x)| *d += x));
            }
            Op::Expand(a) => {
                self.reduce_broadcast(*a, out_shape, grads, |o| g[o]);
            }
            Op::Concat(parts) => {
                let width = *out_shape.last().unwrap();
                let rows = g.len() / width;
                let mut start = 0;
                for p in parts {
                    let w = *self.shape(*p).last().unwrap();
                    self.accumulate(*p, grads, |dst| {
                        for r in 0..rows {
                            for j in 0..w {
                                dst[r * w + j] += g[r * width + start + j];
                            }
                        }
                    });
                    start += w;
                }
            }
            Op::SumAxis(a, axis) => {
                let shape = self.shape(*a).to_vec();
                let (pre, ext, post) = (numel(&shape[..*axis]), shape[*axis], numel(&shape[*axis + 1..]));
                self.accumulate(*a, grads, |dst| {
                    for p in 0..pre {
                        for e in 0..ext {
                            let base = (p * ext + e) * post;
                            for q in 0..post {
                                dst[base + q] += g[p * post + q];
                            }
                        }
                    }
                });
            }
            Op::SumAll(a) => {
                let g0 = g[0];
                self.accumulate(*a, grads, |dst| dst.iter_mut().for_each(|d| *d += g0));
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let width = *out_shape.last().unwrap();
                self.accumulate(*a, grads, |dst| {
                    for ((yr, gr), dr) in y.chunks(width).zip(g.chunks(width)).zip(dst.chunks_mut(width)) {
                        let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                        for j in 0..width {
                            dr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let width = *out_shape.last().unwrap();
                let gv = self.value(*gain).data();
                let wn = T::from_usize(width).unwrap();
                self.accumulate(*gain, grads, |dst| {
                    for (hr, gr) in xhat.chunks(width).zip(g.chunks(width)) {
                        for j in 0..width {
                            dst[j] += gr[j] * hr[j];
                        }
                    }
                });
                self.accumulate(*bias, grads, |dst| {
                    for gr in g.chunks(width) {
                        for j in 0..width {
                            dst[j] += gr[j];
                        }
                    }
                });
                self.accumulate(*x, grads, |dst| {
                    for (r, ((hr, gr), dr)) in xhat.chunks(width).zip(g.chunks(width)).zip(dst.chunks_mut(width)).enumerate() {
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for j in 0..width {
                            let dh = gr[j] * gv[j];
                            mean_dh += dh;
                            mean_dh_h += dh * hr[j];
                        }
                        mean_dh /= wn;
                        mean_dh_h /= wn;
                        for j in 0..width {
                            let dh = gr[j] * gv[j];
                            dr[j] += rstd[r] * (dh - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                });
            }
        }
        Ok(())
    }

    fn accumulate(&self, v: Var, grads: &mut [Option<Vec<T>>], f: impl FnOnce(&mut [T])) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let len = self.nodes[v.0].value.len();
        let dst = grads[v.0].get_or_insert_with(|| vec![T::zero(); len]);
        f(dst);
    }

    /// Adds `term(o, ·)` for every output offset `o` into the broadcast source of `v`.
    fn reduce_broadcast(&self, v: Var, out_shape: &[usize], grads: &mut [Option<Vec<T>>], term: impl Fn(usize) -> T) {
        let shape = self.shape(v).to_vec();
        if shape == out_shape {
            self.accumulate(v, grads, |dst| {
                for (o, d) in dst.iter_mut().enumerate() {
                    *d += term(o);
                }
            });
            return;
        }
        let s = broadcast_strides(&shape, out_shape);
        self.accumulate(v, grads, |dst| {
            let mut o = 0;
            for_each_offset(out_shape, &s, |src| {
                dst[src] += term(o);
                o += 1;
            });
        });
    }

    fn matmul_backward(&self, a: Var, b: Var, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n, batch) = matmul_dims(ta.shape(), tb.shape())?;
        let (ki, ni) = (k as isize, n as isize);
        if tb.rank() == 2 {
            let rows = ta.len() / k;
            // dA = dC · Bᵀ
            self.accumulate(a, grads, |da| {
                T::gemm(rows, n, k, T::one(), g, ni, 1, tb.data(), 1, ni, T::one(), da, ki, 1);
            });
            // dB = Aᵀ · dC
            self.accumulate(b, grads, |db| {
                T::gemm(k, rows, n, T::one(), ta.data(), 1, ki, g, ni, 1, T::one(), db, ni, 1);
            });
            return Ok(());
        }
        let offsets = batch_offsets(&batch, ta.shape(), tb.shape(), m * k, k * n);
        self.accumulate(a, grads, |da| {
            for (bi, &(oa, ob)) in offsets.iter().enumerate() {
                let gc = &g[bi * m * n..(bi + 1) * m * n];
                T::gemm(m, n, k, T::one(), gc, ni, 1, &tb.data()[ob..ob + k * n], 1, ni, T::one(), &mut da[oa..oa + m * k], ki, 1);
            }
        });
        self.accumulate(b, grads, |db| {
            for (bi, &(oa, ob)) in offsets.iter().enumerate() {
                let gc = &g[bi * m * n..(bi + 1) * m * n];
                T::gemm(k, m, n, T::one(), &ta.data()[oa..oa + m * k], 1, ki, gc, ni, 1, T::one(), &mut db[ob..ob + k * n], ni, 1);
            }
        });
        Ok(())
    }
}
