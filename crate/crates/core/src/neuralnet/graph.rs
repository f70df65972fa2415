//! Tape-based reverse-mode autodiff over [`Tensor`]s.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended in
//! evaluation order, so a reverse sweep over the tape is a valid topological
//! order for backpropagation.

use super::conv::{col2im, im2col, Geom};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    ConvT2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    InstanceNorm { x: Var, inv_std: Vec<T> },
    LeakyRelu { x: Var, slope: f64 },
    Tanh { x: Var },
    Concat { a: Var, b: Var },
    AvgPool2 { x: Var },
    GlobalAvgPool { x: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: f64 },
    Abs { x: Var },
    Square { x: Var },
    Mean { x: Var },
    Sum { x: Var },
    BceLogits { x: Var, target: f64, clip: f64 },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Parameters of one network bound into a graph.
#[derive(Clone, Debug)]
pub struct Bound {
    pub vars: Vec<Var>,
}

impl Bound {
    pub fn get(&self, i: usize) -> Var {
        self.vars[i]
    }
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(what: &str, a: [usize; 4], b: [usize; 4]) -> Error {
    Error::Shape(format!("{what}: {a:?} vs {b:?}"))
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert!(value.is_finite(), "non-finite activation from {:?}", std::mem::discriminant(&op));
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Copies `value` as a gradient-free leaf.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn bind(&mut self, params: &[Tensor<T>], trainable: bool) -> Bound {
        Bound {
            vars: params.iter().map(|p| self.leaf(p.clone(), trainable)).collect(),
        }
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 4] {
        self.nodes[v.0].value.shape
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    // ---- forward ops ----

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        if ws[1] != xs[1] || ws[2] != ws[3] {
            return Err(shape_err("conv2d weight", xs, ws));
        }
        let g = Geom::new(xs[1], xs[2], xs[3], ws[2], stride, pad).ok_or_else(|| shape_err("conv2d kernel", xs, ws))?;
        let cout = ws[0];
        let mut out = Tensor::zeros([xs[0], cout, g.oh, g.ow]);
        let mut cols = vec![T::zero(); g.rows() * g.cols()];
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;
        for i in 0..xs[0] {
            im2col(&g, xv.sample(i), &mut cols);
            let o = &mut out.data[i * cout * g.cols()..(i + 1) * cout * g.cols()];
            T::gemm(cout, g.rows(), g.cols(), &wv.data, false, &cols, false, o, T::zero());
            if let Some(b) = b {
                add_bias(o, &self.nodes[b.0].value.data, g.cols());
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(out, Op::Conv2d { x, w, b, stride, pad }, rg))
    }

    /// Transposed convolution; `w` is `(c_in, c_out, k, k)`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        if ws[0] != xs[1] || ws[2] != ws[3] {
            return Err(shape_err("conv_transpose2d weight", xs, ws));
        }
        let (k, cout) = (ws[2], ws[1]);
        let oh = (xs[2] - 1) * stride + k;
        let ow = (xs[3] - 1) * stride + k;
        if oh < 2 * pad + 1 || ow < 2 * pad + 1 {
            return Err(shape_err("conv_transpose2d padding", xs, ws));
        }
        let g = Geom::new(cout, oh - 2 * pad, ow - 2 * pad, k, stride, pad).ok_or_else(|| shape_err("conv_transpose2d", xs, ws))?;
        debug_assert_eq!((g.oh, g.ow), (xs[2], xs[3]));
        let mut out = Tensor::zeros([xs[0], cout, g.h, g.w]);
        let mut cols = vec![T::zero(); g.rows() * g.cols()];
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;
        let plane = g.h * g.w;
        for i in 0..xs[0] {
            T::gemm(g.rows(), xs[1], g.cols(), &wv.data, true, xv.sample(i), false, &mut cols, T::zero());
            let o = &mut out.data[i * cout * plane..(i + 1) * cout * plane];
            col2im(&g, &cols, o);
            if let Some(b) = b {
                add_bias(o, &self.nodes[b.0].value.data, plane);
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(out, Op::ConvT2d { x, w, b, stride, pad }, rg))
    }

    /// Per-sample, per-channel normalization without affine parameters.
    pub fn instance_norm(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape;
        let p = h * w;
        let eps = T::lit(1e-5);
        let mut out = Tensor::zeros(xv.shape);
        let mut inv_std = Vec::with_capacity(n * c);
        for (src, dst) in xv.data.chunks(p).zip(out.data.chunks_mut(p)) {
            let mean = src.iter().fold(T::zero(), |a, v| a + *v) / T::lit(p as f64);
            let var = src.iter().fold(T::zero(), |a, v| a + (*v - mean) * (*v - mean)) / T::lit(p as f64);
            let inv = T::one() / (var + eps).sqrt();
            for (d, s) in dst.iter_mut().zip(src) {
                *d = (*s - mean) * inv;
            }
            inv_std.push(inv);
        }
        let rg = self.rg(x);
        self.push(out, Op::InstanceNorm { x, inv_std }, rg)
    }

    fn map(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let xv = self.value(x);
        let out = Tensor {
            shape: xv.shape,
            data: xv.data.iter().map(|v| f(*v)).collect(),
        };
        let rg = self.rg(x);
        self.push(out, op, rg)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::lit(slope);
        self.map(x, Op::LeakyRelu { x, slope }, |v| if v > T::zero() { v } else { v * s })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, Op::Tanh { x }, |v| v.tanh())
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let k = T::lit(c);
        self.map(x, Op::Scale { x, c }, |v| v * k)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.map(x, Op::Abs { x }, |v| v.abs())
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.map(x, Op::Square { x }, |v| v * v)
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = Tensor::concat(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Concat { a, b }, rg))
    }

    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Shape(format!("avg_pool2 needs even extents, got {:?}", xv.shape)));
        }
        let (oh, ow) = (h / 2, w / 2);
        let q = T::lit(0.25);
        let mut out = Tensor::zeros([n, c, oh, ow]);
        for (src, dst) in xv.data.chunks(h * w).zip(out.data.chunks_mut(oh * ow)) {
            for y in 0..oh {
                for x in 0..ow {
                    let i = 2 * y * w + 2 * x;
                    dst[y * ow + x] = (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]) * q;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::AvgPool2 { x }, rg))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape;
        let inv = T::lit(1.0 / (h * w) as f64);
        let data = xv.data.chunks(h * w).map(|p| p.iter().fold(T::zero(), |a, v| a + *v) * inv).collect();
        let rg = self.rg(x);
        self.push(Tensor { shape: [n, c, 1, 1], data }, Op::GlobalAvgPool { x }, rg)
    }

    fn zip(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape != bv.shape {
            return Err(shape_err("elementwise", av.shape, bv.shape));
        }
        let out = Tensor {
            shape: av.shape,
            data: av.data.iter().zip(&bv.data).map(|(x, y)| f(*x, *y)).collect(),
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Add { a, b }, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Sub { a, b }, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Mul { a, b }, |x, y| x * y)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s = xv.data.iter().fold(T::zero(), |a, v| a + *v) / T::lit(xv.len() as f64);
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean { x }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().fold(T::zero(), |a, v| a + *v);
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum { x }, rg)
    }

    /// Mean binary cross-entropy of logits against a constant target, with
    /// logits clipped to `[-clip, clip]`.
    pub fn bce_with_logits(&mut self, x: Var, target: f64, clip: f64) -> Var {
        let xv = self.value(x);
        let (t, c) = (T::lit(target), T::lit(clip));
        let total = xv.data.iter().fold(T::zero(), |acc, v| {
            let z = v.max(-c).min(c);
            acc + z.max(T::zero()) - z * t + (T::one() + (-z.abs()).exp()).ln()
        });
        let s = total / T::lit(xv.len() as f64);
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::BceLogits { x, target, clip }, rg)
    }

    // ---- backward ----

    /// Reverse sweep from the scalar `loss`. Gradients of earlier sweeps are
    /// discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!("backward needs a scalar, got {:?}", self.shape(loss))));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                self.grads[i] = Some(g);
                continue;
            }
            self.backprop(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients of bound parameters, zero where none flowed.
    pub fn grads_of(&self, b: &Bound) -> Vec<Tensor<T>> {
        b.vars
            .iter()
            .map(|v| self.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(self.shape(*v))))
            .collect()
    }

    fn acc(&mut self, v: Var, f: impl FnOnce(&mut [T], &Self)) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let mut g = self.grads[v.0].take().unwrap_or_else(|| Tensor::zeros(self.nodes[v.0].value.shape));
        f(&mut g.data, self);
        self.grads[v.0] = Some(g);
    }

    fn backprop(&mut self, i: usize, g: &Tensor<T>) {
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, stride, pad } => self.conv2d_backward(g, x, w, b, stride, pad),
            Op::ConvT2d { x, w, b, stride, pad } => self.conv_t2d_backward(g, x, w, b, stride, pad),
            Op::InstanceNorm { x, inv_std } => {
                let y = &self.nodes[i].value;
                let p = y.h() * y.w();
                let mut dx = vec![T::zero(); y.len()];
                for (j, inv) in inv_std.iter().enumerate() {
                    let (ys, gs) = (&y.data[j * p..(j + 1) * p], &g.data[j * p..(j + 1) * p]);
                    let n = T::lit(p as f64);
                    let mg = gs.iter().fold(T::zero(), |a, v| a + *v) / n;
                    let mgy = gs.iter().zip(ys).fold(T::zero(), |a, (u, v)| a + *u * *v) / n;
                    for k in 0..p {
                        dx[j * p + k] = *inv * (gs[k] - mg - ys[k] * mgy);
                    }
                }
                self.acc(x, |d, _| add_into(d, &dx));
            }
            Op::LeakyRelu { x, slope } => {
                let s = T::lit(slope);
                self.acc(x, |d, me| {
                    for ((d, gv), xv) in d.iter_mut().zip(&g.data).zip(&me.nodes[x.0].value.data) {
                        *d = *d + if *xv > T::zero() { *gv } else { *gv * s };
                    }
                });
            }
            Op::Tanh { x } => {
                let y = self.nodes[i].value.data.clone();
                self.acc(x, |d, _| {
                    for ((d, gv), yv) in d.iter_mut().zip(&g.data).zip(&y) {
                        *d = *d + *gv * (T::one() - *yv * *yv);
                    }
                });
            }
            Op::Concat { a, b } => {
                let (sa, sb) = (self.nodes[a.0].value.sample_len(), self.nodes[b.0].value.sample_len());
                let n = g.n();
                self.acc(a, |d, _| {
                    for s in 0..n {
                        add_into(&mut d[s * sa..(s + 1) * sa], &g.data[s * (sa + sb)..s * (sa + sb) + sa]);
                    }
                });
                self.acc(b, |d, _| {
                    for s in 0..n {
                        add_into(&mut d[s * sb..(s + 1) * sb], &g.data[s * (sa + sb) + sa..(s + 1) * (sa + sb)]);
                    }
                });
            }
            Op::AvgPool2 { x } => {
                let [_, _, h, w] = self.shape(x);
                let (oh, ow) = (h / 2, w / 2);
                let q = T::lit(0.25);
                self.acc(x, |d, _| {
                    for (dst, src) in d.chunks_mut(h * w).zip(g.data.chunks(oh * ow)) {
                        for y in 0..oh {
                            for xx in 0..ow {
                                let v = src[y * ow + xx] * q;
                                let i = 2 * y * w + 2 * xx;
                                for j in [i, i + 1, i + w, i + w + 1] {
                                    dst[j] = dst[j] + v;
                                }
                            }
                        }
                    }
                });
            }
            Op::GlobalAvgPool { x } => {
                let [_, _, h, w] = self.shape(x);
                let inv = T::lit(1.0 / (h * w) as f64);
                self.acc(x, |d, _| {
                    for (dst, gv) in d.chunks_mut(h * w).zip(&g.data) {
                        for v in dst {
                            *v = *v + *gv * inv;
                        }
                    }
                });
            }
            Op::Add { a, b } => {
                self.acc(a, |d, _| add_into(d, &g.data));
                self.acc(b, |d, _| add_into(d, &g.data));
            }
            Op::Sub { a, b } => {
                self.acc(a, |d, _| add_into(d, &g.data));
                self.acc(b, |d, _| {
                    for (d, gv) in d.iter_mut().zip(&g.data) {
                        *d = *d - *gv;
                    }
                });
            }
            Op::Mul { a, b } => {
                self.acc(a, |d, me| {
                    for ((d, gv), bv) in d.iter_mut().zip(&g.data).zip(&me.nodes[b.0].value.data) {
                        *d = *d + *gv * *bv;
                    }
                });
                self.acc(b, |d, me| {
                    for ((d, gv), av) in d.iter_mut().zip(&g.data).zip(&me.nodes[a.0].value.data) {
                        *d = *d + *gv * *av;
                    }
                });
            }
            Op::Scale { x, c } => {
                let k = T::lit(c);
                self.acc(x, |d, _| {
                    for (d, gv) in d.iter_mut().zip(&g.data) {
                        *d = *d + *gv * k;
                    }
                });
            }
            Op::Abs { x } => self.acc(x, |d, me| {
                for ((d, gv), xv) in d.iter_mut().zip(&g.data).zip(&me.nodes[x.0].value.data) {
                    let s = if *xv > T::zero() {
                        T::one()
                    } else if *xv < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    };
                    *d = *d + *gv * s;
                }
            }),
            Op::Square { x } => self.acc(x, |d, me| {
                let two = T::lit(2.0);
                for ((d, gv), xv) in d.iter_mut().zip(&g.data).zip(&me.nodes[x.0].value.data) {
                    *d = *d + two * *gv * *xv;
                }
            }),
            Op::Mean { x } => {
                let v = g.item() / T::lit(self.value(x).len() as f64);
                self.acc(x, |d, _| d.iter_mut().for_each(|d| *d = *d + v));
            }
            Op::Sum { x } => {
                let v = g.item();
                self.acc(x, |d, _| d.iter_mut().for_each(|d| *d = *d + v));
            }
            Op::BceLogits { x, target, clip } => {
                let scale = g.item() / T::lit(self.value(x).len() as f64);
                let (t, c) = (T::lit(target), T::lit(clip));
                self.acc(x, |d, me| {
                    for (d, xv) in d.iter_mut().zip(&me.nodes[x.0].value.data) {
                        if xv.abs() < c {
                            let sig = T::one() / (T::one() + (-*xv).exp());
                            *d = *d + scale * (sig - t);
                        }
                    }
                });
            }
        }
    }

    fn bias_backward(&mut self, g: &Tensor<T>, b: Option<Var>) {
        if let Some(b) = b {
            let plane = g.h() * g.w();
            let c = g.c();
            self.acc(b, |d, _| {
                for (j, chunk) in g.data.chunks(plane).enumerate() {
                    d[j % c] = d[j % c] + chunk.iter().fold(T::zero(), |a, v| a + *v);
                }
            });
        }
    }

    fn conv2d_backward(&mut self, g: &Tensor<T>, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) {
        self.bias_backward(g, b);
        let xs = self.shape(x);
        let ws = self.shape(w);
        let geo = Geom::new(xs[1], xs[2], xs[3], ws[2], stride, pad).expect("validated in forward");
        let cout = ws[0];
        let (need_w, need_x) = (self.rg(w), self.rg(x));
        let mut cols = vec![T::zero(); geo.rows() * geo.cols()];
        if need_w {
            let mut dw = vec![T::zero(); ws.iter().product()];
            for i in 0..xs[0] {
                im2col(&geo, self.nodes[x.0].value.sample(i), &mut cols);
                T::gemm(cout, geo.cols(), geo.rows(), g.sample(i), false, &cols, true, &mut dw, T::one());
            }
            self.acc(w, |d, _| add_into(d, &dw));
        }
        if need_x {
            let wv = self.nodes[w.0].value.data.clone();
            let plane = xs[1] * xs[2] * xs[3];
            self.acc(x, |d, _| {
                for i in 0..xs[0] {
                    T::gemm(geo.rows(), cout, geo.cols(), &wv, true, g.sample(i), false, &mut cols, T::zero());
                    col2im(&geo, &cols, &mut d[i * plane..(i + 1) * plane]);
                }
            });
        }
    }

    fn conv_t2d_backward(&mut self, g: &Tensor<T>, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) {
        self.bias_backward(g, b);
        let xs = self.shape(x);
        let ws = self.shape(w);
        let (k, cout) = (ws[2], ws[1]);
        let geo = Geom::new(cout, g.h(), g.w(), k, stride, pad).expect("validated in forward");
        let (need_w, need_x) = (self.rg(w), self.rg(x));
        let mut cols = vec![T::zero(); geo.rows() * geo.cols()];
        let mut dw = vec![T::zero(); if need_w { ws.iter().product() } else { 0 }];
        let mut dx = vec![T::zero(); if need_x { xs.iter().product() } else { 0 }];
        let plane = xs[1] * xs[2] * xs[3];
        for i in 0..xs[0] {
            im2col(&geo, g.sample(i), &mut cols);
            if need_x {
                let wv = &self.nodes[w.0].value.data;
                T::gemm(xs[1], geo.rows(), geo.cols(), wv, false, &cols, false, &mut dx[i * plane..(i + 1) * plane], T::zero());
            }
            if need_w {
                let xv = self.nodes[x.0].value.sample(i);
                T::gemm(xs[1], geo.cols(), geo.rows(), xv, false, &cols, true, &mut dw, T::one());
            }
        }
        if need_w {
            self.acc(w, |d, _| add_into(d, &dw));
        }
        if need_x {
            self.acc(x, |d, _| add_into(d, &dx));
        }
    }
}

fn add_bias<T: Scalar>(out: &mut [T], bias: &[T], plane: usize) {
    for (c, chunk) in out.chunks_mut(plane).enumerate() {
        let b = bias[c];
        for v in chunk {
            *v = *v + b;
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d + *s;
    }
}
