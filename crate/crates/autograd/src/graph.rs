use crate::error::{Error, Result};
use crate::norm::GroupStats;
use crate::pad::PadMode;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::{conv, matmul, norm, pad, resize};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    ChannelBias { x: Var, bias: Var },
    ChannelScale { x: Var, scale: Var },
    Conv2d { x: Var, weight: Var, stride: usize },
    Pad { x: Var, width: usize, mode: PadMode },
    GroupNorm { x: Var, stats: GroupStats<T> },
    Silu(Var),
    LeakyRelu(Var, T),
    Relu(Var),
    Exp(Var),
    Softplus(Var),
    Abs(Var),
    Square(Var),
    Clamp { x: Var, lo: T, hi: T },
    UpsampleNearest { x: Var, factor: usize },
    Reshape(Var),
    Bmm { a: Var, b: Var, ta: bool, tb: bool },
    SoftmaxLast(Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Append-only computation tape. Build the forward pass, then call [`Graph::backward`].
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar w.r.t. every leaf created with [`Graph::param`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// `log(1 + e^x)` without overflow.
pub fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf: gradients are reported for it.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.ng(v)
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T) -> Result<(Tensor<T>, bool)> {
        let (va, vb) = (self.value(a), self.value(b));
        if !va.same_shape(vb) {
            return Err(shape_err(name, va.shape(), vb.shape()));
        }
        Ok((va.zip_map(vb, f), self.ng(a) || self.ng(b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, ng) = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, ng) = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, ng) = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = T::lit(s);
        let v = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, s), ng)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let s = T::lit(s);
        let v = self.value(a).map(|x| x + s);
        let ng = self.ng(a);
        self.push(v, Op::AddScalar(a), ng)
    }

    fn channel_layout(&self, x: Var, param: Var, name: &str) -> Result<(usize, usize, usize)> {
        let xs = self.shape(x);
        let ps = self.shape(param);
        if xs.len() < 2 || ps.len() != 1 || ps[0] != xs[1] {
            return Err(shape_err(name, xs, ps));
        }
        Ok((xs[0], xs[1], xs[2..].iter().product()))
    }

    /// Adds a per-channel bias `[C]` to `[N, C, ...]`.
    pub fn channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, c, inner) = self.channel_layout(x, bias, "channel_bias")?;
        let mut v = self.value(x).clone();
        let b = self.value(bias).data().to_vec();
        for (i, chunk) in v.data_mut().chunks_exact_mut(inner).enumerate() {
            let bv = b[i % c];
            chunk.iter_mut().for_each(|e| *e += bv);
        }
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(v, Op::ChannelBias { x, bias }, ng))
    }

    /// Multiplies `[N, C, ...]` by a per-channel factor `[C]`.
    pub fn channel_scale(&mut self, x: Var, scale: Var) -> Result<Var> {
        let (_, c, inner) = self.channel_layout(x, scale, "channel_scale")?;
        let mut v = self.value(x).clone();
        let s = self.value(scale).data().to_vec();
        for (i, chunk) in v.data_mut().chunks_exact_mut(inner).enumerate() {
            let sv = s[i % c];
            chunk.iter_mut().for_each(|e| *e *= sv);
        }
        let ng = self.ng(x) || self.ng(scale);
        Ok(self.push(v, Op::ChannelScale { x, scale }, ng))
    }

    /// Unpadded convolution; `weight` is `[C_out, C_in, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, weight: Var, stride: usize) -> Result<Var> {
        let v = conv::forward(self.value(x), self.value(weight), stride)?;
        let ng = self.ng(x) || self.ng(weight);
        Ok(self.push(v, Op::Conv2d { x, weight, stride }, ng))
    }

    pub fn pad(&mut self, x: Var, width: usize, mode: PadMode) -> Result<Var> {
        if width == 0 {
            return Ok(x);
        }
        let v = pad::forward(self.value(x), width, mode)?;
        let ng = self.ng(x);
        Ok(self.push(v, Op::Pad { x, width, mode }, ng))
    }

    /// Group normalization without affine parameters.
    pub fn group_norm(&mut self, x: Var, groups: usize, eps: f64) -> Result<Var> {
        let (v, stats) = norm::forward(self.value(x), groups, eps)?;
        let ng = self.ng(x);
        Ok(self.push(v, Op::GroupNorm { x, stats }, ng))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let v = self.value(x).map(f);
        let ng = self.ng(x);
        self.push(v, op, ng)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * sigmoid(v), Op::Silu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::lit(slope);
        self.unary(x, move |v| if v > T::zero() { v } else { v * s }, Op::LeakyRelu(x, s))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(T::zero()), Op::Relu(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), Op::Exp(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, Op::Softplus(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.abs(), Op::Abs(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    /// Clamp with zero gradient outside `[lo, hi]`.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (lo, hi) = (T::lit(lo), T::lit(hi));
        self.unary(x, move |v| v.max(lo).min(hi), Op::Clamp { x, lo, hi })
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor == 1 {
            return Ok(x);
        }
        let v = resize::upsample_forward(self.value(x), factor)?;
        let ng = self.ng(x);
        Ok(self.push(v, Op::UpsampleNearest { x, factor }, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape)?;
        let ng = self.ng(x);
        Ok(self.push(v, Op::Reshape(x), ng))
    }

    /// Batched `op(a) @ op(b)` on `[B, rows, cols]` operands.
    pub fn bmm(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let v = matmul::forward(self.value(a), self.value(b), ta, tb)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Bmm { a, b, ta, tb }, ng))
    }

    pub fn softmax_last(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let last = *xv.shape().last().expect("softmax on rank >= 1");
        let mut v = xv.clone();
        for row in v.data_mut().chunks_exact_mut(last) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for e in row.iter_mut() {
                *e = (*e - max).exp();
                total += *e;
            }
            row.iter_mut().for_each(|e| *e /= total);
        }
        let ng = self.ng(x);
        self.push(v, Op::SoftmaxLast(x), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        let ng = self.ng(x);
        self.push(v, Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let total: f64 = xv.data().iter().map(|v| v.as_f64()).sum();
        let v = Tensor::scalar(T::lit(total / xv.numel() as f64));
        let ng = self.ng(x);
        self.push(v, Op::Mean(x), ng)
    }

    /// Reverse-mode pass from a single-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        let out = self.value(output);
        if out.numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a single-element output, got shape {:?}",
                out.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::full(out.shape(), T::one()));

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }
        // Interior gradients were consumed; only leaves remain populated.
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let mut acc = |v: Var, t: Tensor<T>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match grads[v.0].as_mut() {
                Some(existing) => existing.add_assign(&t),
                None => grads[v.0] = Some(t),
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.zip_map(val(*b), |gv, bv| gv * bv));
                }
                if self.ng(*b) {
                    acc(*b, g.zip_map(val(*a), |gv, av| gv * av));
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                acc(*a, g.map(|v| v * s));
            }
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::ChannelBias { x, bias } => {
                acc(*x, g.clone());
                if self.ng(*bias) {
                    let c = val(*bias).numel();
                    let inner = g.numel() / (g.shape()[0] * c);
                    let mut db = Tensor::zeros(&[c]);
                    for (i, chunk) in g.data().chunks_exact(inner).enumerate() {
                        db.data_mut()[i % c] += chunk.iter().copied().sum::<T>();
                    }
                    acc(*bias, db);
                }
            }
            Op::ChannelScale { x, scale } => {
                let c = val(*scale).numel();
                let inner = g.numel() / (g.shape()[0] * c);
                if self.ng(*x) {
                    let s = val(*scale).data();
                    let mut dx = g.clone();
                    for (i, chunk) in dx.data_mut().chunks_exact_mut(inner).enumerate() {
                        let sv = s[i % c];
                        chunk.iter_mut().for_each(|e| *e *= sv);
                    }
                    acc(*x, dx);
                }
                if self.ng(*scale) {
                    let mut ds = Tensor::zeros(&[c]);
                    let chunks = g.data().chunks_exact(inner).zip(val(*x).data().chunks_exact(inner));
                    for (i, (gc, xc)) in chunks.enumerate() {
                        ds.data_mut()[i % c] += gc.iter().zip(xc).map(|(&a, &b)| a * b).sum::<T>();
                    }
                    acc(*scale, ds);
                }
            }
            Op::Conv2d { x, weight, stride } => {
                let (dx, dw) =
                    conv::backward(val(*x), val(*weight), *stride, g, self.ng(*x), self.ng(*weight));
                if let Some(dx) = dx {
                    acc(*x, dx);
                }
                if let Some(dw) = dw {
                    acc(*weight, dw);
                }
            }
            Op::Pad { x, width, mode } => {
                acc(*x, pad::backward(g, val(*x).shape(), *width, *mode));
            }
            Op::GroupNorm { x, stats } => acc(*x, norm::backward(val(*x), stats, g)),
            Op::Silu(x) => acc(
                *x,
                g.zip_map(val(*x), |gv, xv| {
                    let s = sigmoid(xv);
                    gv * s * (T::one() + xv * (T::one() - s))
                }),
            ),
            Op::LeakyRelu(x, slope) => {
                let s = *slope;
                acc(*x, g.zip_map(val(*x), |gv, xv| if xv > T::zero() { gv } else { gv * s }));
            }
            Op::Relu(x) => {
                acc(*x, g.zip_map(val(*x), |gv, xv| if xv > T::zero() { gv } else { T::zero() }))
            }
            Op::Exp(x) => acc(*x, g.zip_map(&node.value, |gv, yv| gv * yv)),
            Op::Softplus(x) => acc(*x, g.zip_map(val(*x), |gv, xv| gv * sigmoid(xv))),
            Op::Abs(x) => acc(*x, g.zip_map(val(*x), |gv, xv| gv * xv.signum())),
            Op::Square(x) => acc(*x, g.zip_map(val(*x), |gv, xv| gv * (xv + xv))),
            Op::Clamp { x, lo, hi } => {
                let (lo, hi) = (*lo, *hi);
                acc(
                    *x,
                    g.zip_map(val(*x), |gv, xv| if xv >= lo && xv <= hi { gv } else { T::zero() }),
                );
            }
            Op::UpsampleNearest { x, factor } => {
                acc(*x, resize::upsample_backward(g, val(*x).shape(), *factor));
            }
            Op::Reshape(x) => {
                acc(*x, g.clone().reshape(val(*x).shape()).expect("same element count"));
            }
            Op::Bmm { a, b, ta, tb } => {
                let (da, db) =
                    matmul::backward(val(*a), val(*b), *ta, *tb, g, self.ng(*a), self.ng(*b));
                if let Some(da) = da {
                    acc(*a, da);
                }
                if let Some(db) = db {
                    acc(*b, db);
                }
            }
            Op::SoftmaxLast(x) => {
                let last = *g.shape().last().expect("rank >= 1");
                let mut dx = Tensor::zeros(g.shape());
                let rows = g
                    .data()
                    .chunks_exact(last)
                    .zip(node.value.data().chunks_exact(last))
                    .zip(dx.data_mut().chunks_exact_mut(last));
                for ((gr, yr), dr) in rows {
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for ((d, &gv), &yv) in dr.iter_mut().zip(gr).zip(yr) {
                        *d = yv * (gv - dot);
                    }
                }
                acc(*x, dx);
            }
            Op::Sum(x) => acc(*x, Tensor::full(val(*x).shape(), g.item())),
            Op::Mean(x) => {
                let n = T::lit(val(*x).numel() as f64);
                acc(*x, Tensor::full(val(*x).shape(), g.item() / n));
            }
        }
    }
}
