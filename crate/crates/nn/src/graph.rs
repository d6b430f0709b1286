//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of one forward pass. Values are
//! computed eagerly; [`Graph::backward`] walks the tape in reverse.

use std::collections::HashMap;

use crate::conv::{conv2d_backward, conv2d_forward, ConvGeom};
use crate::filter::{self, Border};
use crate::float::matmul;
use crate::params::{ParamId, ParamStore};
use crate::{Float, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<F> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, F),
    AddScalar(Var),
    Relu(Var),
    LeakyRelu(Var, F),
    Tanh(Var),
    Sigmoid(Var),
    Reshape(Var),
    Concat(Vec<Var>),
    InstanceNorm {
        x: Var,
        inv_std: Vec<F>,
    },
    UpsampleNearest2(Var),
    AvgPool2(Var),
    SepFilter {
        x: Var,
        kernel: Vec<F>,
        border: Border,
    },
    Decimate2(Var),
    ZeroInsert2(Var),
    Crop(Var),
    Mean(Var),
    Sum(Var),
    Square(Var),
    Abs(Var),
    ChannelUnitNorm {
        x: Var,
        norms: Vec<F>,
    },
    GlobalAvgPool(Var),
    BroadcastHw(Var),
    SoftmaxCe {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<F>,
    },
    SigmoidFocal {
        logits: Var,
        targets: Vec<F>,
        weights: Vec<F>,
        gamma: F,
        norm: F,
    },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

pub struct Graph<F: Float> {
    nodes: Vec<Node<F>>,
    params: HashMap<(u64, usize), Var>,
    frozen: bool,
}

impl<F: Float> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn nchw(shape: &[usize]) -> (usize, usize, usize, usize) {
    assert_eq!(shape.len(), 4, "expected NCHW, got {shape:?}");
    (shape[0], shape[1], shape[2], shape[3])
}

/// Softplus `ln(1 + e^x)` without overflow.
fn softplus<F: Float>(x: F) -> F {
    if x > F::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid<F: Float>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

impl<F: Float> Graph<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            frozen: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, t: Tensor<F>) -> Var {
        self.leaf(t, false)
    }

    /// Leaf whose gradient is tracked, e.g. for input-gradient checks.
    pub fn input_with_grad(&mut self, t: Tensor<F>) -> Var {
        self.leaf(t, true)
    }

    /// Leaf bound to a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        let key = (store.uid(), id.0);
        if let Some(&v) = self.params.get(&key) {
            return v;
        }
        let v = self.leaf(store.get(id).clone(), !self.frozen);
        self.params.insert(key, v);
        v
    }

    /// Runs `f` with parameters loaded as constants (no weight gradients).
    pub fn with_frozen_params<R>(&mut self, f: impl FnOnce(&mut Self) -> R) -> R {
        let prev = self.frozen;
        self.frozen = true;
        let saved: HashMap<_, _> = std::mem::take(&mut self.params);
        let out = f(self);
        self.params = saved;
        self.frozen = prev;
        out
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let (n, cin, h, wd) = nchw(self.shape(x));
        let ws = self.shape(w).to_vec();
        assert_eq!(ws.len(), 4);
        assert_eq!(ws[1], cin, "conv input channels {cin} vs weight {ws:?}");
        assert_eq!(ws[2], ws[3]);
        let cout = ws[0];
        let geom = ConvGeom {
            cin,
            h,
            w: wd,
            k: ws[2],
            stride,
            pad,
        };
        let (oh, ow) = geom.out_hw();
        let out = conv2d_forward(
            self.value(x).data(),
            n,
            &geom,
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            cout,
        );
        let mut parents = vec![x, w];
        parents.extend(b);
        self.push(
            Tensor::new(&[n, cout, oh, ow], out),
            Op::Conv2d { x, w, b, geom },
            &parents,
        )
    }

    /// `x [N, din] · wᵀ + b` with `w [dout, din]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(xs.len(), 2);
        assert_eq!(ws[1], xs[1], "linear shape mismatch {xs:?} vs {ws:?}");
        let (n, din, dout) = (xs[0], xs[1], ws[0]);
        let mut out = vec![F::zero(); n * dout];
        if let Some(b) = b {
            let bv = self.value(b).data();
            for r in 0..n {
                out[r * dout..(r + 1) * dout].copy_from_slice(bv);
            }
        }
        matmul(
            self.value(x).data(),
            false,
            self.value(w).data(),
            true,
            &mut out,
            n,
            din,
            dout,
            b.is_some(),
        );
        let mut parents = vec![x, w];
        parents.extend(b);
        self.push(
            Tensor::new(&[n, dout], out),
            Op::Linear { x, w, b },
            &parents,
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b), &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x / y);
        self.push(v, Op::Div(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: F) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, s: F) -> Var {
        let v = self.value(a).map(|x| x + s);
        self.push(v, Op::AddScalar(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(F::zero()));
        self.push(v, Op::Relu(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let s = F::c(slope);
        let v = self.value(a).map(|x| if x > F::zero() { x } else { x * s });
        self.push(v, Op::LeakyRelu(a, s), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.tanh());
        self.push(v, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let v = self.value(a).clone().reshaped(shape);
        self.push(v, Op::Reshape(a), &[a])
    }

    /// Concatenation along axis 1.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let s0 = self.shape(parts[0]).to_vec();
        let n = s0[0];
        let tail = &s0[2..];
        let mut c_total = 0;
        for &p in parts {
            let s = self.shape(p);
            assert_eq!(s[0], n, "concat batch mismatch");
            assert_eq!(&s[2..], tail, "concat spatial mismatch");
            c_total += s[1];
        }
        let inner: usize = tail.iter().product();
        let mut data = Vec::with_capacity(n * c_total * inner);
        for i in 0..n {
            for &p in parts {
                let t = self.value(p);
                let per = t.shape()[1] * inner;
                data.extend_from_slice(&t.data()[i * per..(i + 1) * per]);
            }
        }
        let mut shape = vec![n, c_total];
        shape.extend_from_slice(tail);
        self.push(Tensor::new(&shape, data), Op::Concat(parts.to_vec()), parts)
    }

    /// Per-sample, per-channel normalization over the spatial axes, without affine terms.
    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Var {
        let (n, c, h, w) = nchw(self.shape(x));
        let hw = h * w;
        let xv = self.value(x).data();
        let mut out = vec![F::zero(); xv.len()];
        let mut inv_std = Vec::with_capacity(n * c);
        let denom = F::c(hw as f64);
        for p in 0..n * c {
            let plane = &xv[p * hw..(p + 1) * hw];
            let mean = plane.iter().copied().sum::<F>() / denom;
            let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / denom;
            let inv = F::one() / (var + F::c(eps)).sqrt();
            for (o, &v) in out[p * hw..(p + 1) * hw].iter_mut().zip(plane) {
                *o = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        self.push(
            Tensor::new(&[n, c, h, w], out),
            Op::InstanceNorm { x, inv_std },
            &[x],
        )
    }

    pub fn upsample_nearest2(&mut self, x: Var) -> Var {
        let (n, c, h, w) = nchw(self.shape(x));
        let xv = self.value(x).data();
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![F::zero(); n * c * oh * ow];
        for p in 0..n * c {
            let src = &xv[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for y in 0..oh {
                for xx in 0..ow {
                    dst[y * ow + xx] = src[(y / 2) * w + xx / 2];
                }
            }
        }
        self.push(
            Tensor::new(&[n, c, oh, ow], out),
            Op::UpsampleNearest2(x),
            &[x],
        )
    }

    /// 2×2 average pooling; a trailing odd row or column is dropped.
    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let (n, c, h, w) = nchw(self.shape(x));
        let xv = self.value(x).data();
        let (oh, ow) = (h / 2, w / 2);
        let q = F::c(0.25);
        let mut out = vec![F::zero(); n * c * oh * ow];
        for p in 0..n * c {
            let src = &xv[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for y in 0..oh {
                for xx in 0..ow {
                    let i = 2 * y * w + 2 * xx;
                    dst[y * ow + xx] = (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]) * q;
                }
            }
        }
        self.push(Tensor::new(&[n, c, oh, ow], out), Op::AvgPool2(x), &[x])
    }

    fn per_plane(
        &mut self,
        x: Var,
        f: impl Fn(&[F], usize, usize) -> (Vec<F>, usize, usize),
    ) -> Tensor<F> {
        let (n, c, h, w) = nchw(self.shape(x));
        let xv = self.value(x).data();
        let mut data = Vec::new();
        let mut dims = (0, 0);
        for p in 0..n * c {
            let (o, oh, ow) = f(&xv[p * h * w..(p + 1) * h * w], h, w);
            dims = (oh, ow);
            data.extend(o);
        }
        Tensor::new(&[n, c, dims.0, dims.1], data)
    }

    /// Depthwise separable filtering with one 1-D kernel on both axes.
    pub fn sep_filter(&mut self, x: Var, kernel: &[F], border: Border) -> Var {
        let t = self.per_plane(x, |p, h, w| filter::filter_plane(p, h, w, kernel, border));
        self.push(
            t,
            Op::SepFilter {
                x,
                kernel: kernel.to_vec(),
                border,
            },
            &[x],
        )
    }

    pub fn decimate2(&mut self, x: Var) -> Var {
        let t = self.per_plane(x, filter::decimate2);
        self.push(t, Op::Decimate2(x), &[x])
    }

    pub fn zero_insert2(&mut self, x: Var) -> Var {
        let t = self.per_plane(x, filter::zero_insert2);
        self.push(t, Op::ZeroInsert2(x), &[x])
    }

    /// Keeps the top-left `oh × ow` window of every plane.
    pub fn crop(&mut self, x: Var, oh: usize, ow: usize) -> Var {
        let t = self.per_plane(x, |p, h, w| (filter::crop(p, h, w, oh, ow), oh, ow));
        self.push(t, Op::Crop(x), &[x])
    }

    /// Burt–Adelson expand to `oh × ow`.
    pub fn pyr_up(&mut self, x: Var, oh: usize, ow: usize) -> Var {
        let k: Vec<F> = filter::BINOMIAL5.iter().map(|&v| F::c(2.0 * v)).collect();
        let z = self.zero_insert2(x);
        let b = self.sep_filter(z, &k, Border::Reflect);
        self.crop(b, oh, ow)
    }

    /// Burt–Adelson reduce.
    pub fn pyr_down(&mut self, x: Var) -> Var {
        let k = filter::binomial5::<F>();
        let b = self.sep_filter(x, &k, Border::Reflect);
        self.decimate2(b)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = t.sum() / F::c(t.len() as f64);
        self.push(Tensor::scalar(v), Op::Mean(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.value(a).sum();
        self.push(Tensor::scalar(v), Op::Sum(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a), &[a])
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.abs());
        self.push(v, Op::Abs(a), &[a])
    }

    /// Divides every pixel's channel vector by its L2 norm.
    pub fn channel_unit_norm(&mut self, x: Var, eps: f64) -> Var {
        let (n, c, h, w) = nchw(self.shape(x));
        let hw = h * w;
        let xv = self.value(x).data();
        let mut out = vec![F::zero(); xv.len()];
        let mut norms = Vec::with_capacity(n * hw);
        for i in 0..n {
            let base = i * c * hw;
            for p in 0..hw {
                let mut ss = F::c(eps);
                for ch in 0..c {
                    let v = xv[base + ch * hw + p];
                    ss += v * v;
                }
                let nrm = ss.sqrt();
                for ch in 0..c {
                    out[base + ch * hw + p] = xv[base + ch * hw + p] / nrm;
                }
                norms.push(nrm);
            }
        }
        self.push(
            Tensor::new(&[n, c, h, w], out),
            Op::ChannelUnitNorm { x, norms },
            &[x],
        )
    }

    /// `[N, C, H, W] -> [N, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let (n, c, h, w) = nchw(self.shape(x));
        let hw = h * w;
        let xv = self.value(x).data();
        let d = F::c(hw as f64);
        let out = (0..n * c)
            .map(|p| xv[p * hw..(p + 1) * hw].iter().copied().sum::<F>() / d)
            .collect();
        self.push(Tensor::new(&[n, c], out), Op::GlobalAvgPool(x), &[x])
    }

    /// `[N, C] -> [N, C, H, W]`, every pixel a copy of the channel value.
    pub fn broadcast_hw(&mut self, x: Var, h: usize, w: usize) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 2, "broadcast_hw expects [N, C]");
        let hw = h * w;
        let out = self
            .value(x)
            .data()
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, hw))
            .collect();
        self.push(
            Tensor::new(&[s[0], s[1], h, w], out),
            Op::BroadcastHw(x),
            &[x],
        )
    }

    /// Mean softmax cross-entropy of `[N, K]` logits against class labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Var {
        let s = self.shape(logits).to_vec();
        assert_eq!(s.len(), 2);
        let (n, k) = (s[0], s[1]);
        assert_eq!(labels.len(), n);
        let lv = self.value(logits).data();
        let mut probs = vec![F::zero(); n * k];
        let mut loss = F::zero();
        for i in 0..n {
            let row = &lv[i * k..(i + 1) * k];
            let m = row.iter().copied().fold(F::neg_infinity(), F::max);
            let z: F = row.iter().map(|&v| (v - m).exp()).sum();
            for j in 0..k {
                probs[i * k + j] = (row[j] - m).exp() / z;
            }
            assert!(labels[i] < k, "label out of range");
            loss += z.ln() + m - row[labels[i]];
        }
        loss /= F::c(n as f64);
        self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    /// Weighted sigmoid focal loss `Σ wᵢ·FL(zᵢ, tᵢ) / norm` for soft targets.
    pub fn sigmoid_focal(
        &mut self,
        logits: Var,
        targets: &[F],
        weights: &[F],
        gamma: f64,
        norm: f64,
    ) -> Var {
        let lv = self.value(logits).data();
        assert_eq!(lv.len(), targets.len());
        assert_eq!(lv.len(), weights.len());
        let g = F::c(gamma);
        let mut loss = F::zero();
        for ((&z, &t), &w) in lv.iter().zip(targets).zip(weights) {
            if w == F::zero() {
                continue;
            }
            let p = sigmoid(z);
            let log_p = -softplus(-z);
            let log_1mp = -softplus(z);
            let pos = -(F::one() - p).powf(g) * log_p;
            let neg = -p.powf(g) * log_1mp;
            loss += w * (t * pos + (F::one() - t) * neg);
        }
        loss /= F::c(norm);
        self.push(
            Tensor::scalar(loss),
            Op::SigmoidFocal {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                gamma: g,
                norm: F::c(norm),
            },
            &[logits],
        )
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients<F> {
        assert_eq!(self.value(loss).len(), 1, "backward() needs a scalar");
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), F::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
        }
        Gradients {
            grads,
            params: self.params.clone(),
        }
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, i: usize, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let mut acc = |v: Var, t: Tensor<F>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(e) => e.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let n = self.value(*x).shape()[0];
                let cout = y.shape()[1];
                let (dx, dw, db) = conv2d_backward(
                    self.value(*x).data(),
                    n,
                    geom,
                    self.value(*w).data(),
                    cout,
                    g.data(),
                    self.rg(*x),
                    self.rg(*w),
                );
                if let Some(dx) = dx {
                    acc(*x, Tensor::new(self.shape(*x), dx));
                }
                if let Some(dw) = dw {
                    acc(*w, Tensor::new(self.shape(*w), dw));
                }
                if let Some(b) = b {
                    acc(*b, Tensor::new(&[cout], db));
                }
            }
            Op::Linear { x, w, b } => {
                let xs = self.shape(*x);
                let (n, din) = (xs[0], xs[1]);
                let dout = y.shape()[1];
                if self.rg(*x) {
                    let mut dx = vec![F::zero(); n * din];
                    matmul(
                        g.data(),
                        false,
                        self.value(*w).data(),
                        false,
                        &mut dx,
                        n,
                        dout,
                        din,
                        false,
                    );
                    acc(*x, Tensor::new(&[n, din], dx));
                }
                if self.rg(*w) {
                    let mut dw = vec![F::zero(); dout * din];
                    matmul(
                        g.data(),
                        true,
                        self.value(*x).data(),
                        false,
                        &mut dw,
                        dout,
                        n,
                        din,
                        false,
                    );
                    acc(*w, Tensor::new(&[dout, din], dw));
                }
                if let Some(b) = b {
                    let mut db = vec![F::zero(); dout];
                    for r in 0..n {
                        for (d, &gv) in db.iter_mut().zip(&g.data()[r * dout..(r + 1) * dout]) {
                            *d += gv;
                        }
                    }
                    acc(*b, Tensor::new(&[dout], db));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    acc(*a, g.zip_map(self.value(*b), |gv, bv| gv * bv));
                }
                if self.rg(*b) {
                    acc(*b, g.zip_map(self.value(*a), |gv, av| gv * av));
                }
            }
            Op::Div(a, b) => {
                if self.rg(*a) {
                    acc(*a, g.zip_map(self.value(*b), |gv, bv| gv / bv));
                }
                if self.rg(*b) {
                    let q = y.zip_map(self.value(*b), |yv, bv| yv / bv);
                    acc(*b, g.zip_map(&q, |gv, qv| -gv * qv));
                }
            }
            Op::Scale(a, s) => acc(*a, g.map(|v| v * *s)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Relu(a) => acc(
                *a,
                g.zip_map(y, |gv, yv| if yv > F::zero() { gv } else { F::zero() }),
            ),
            Op::LeakyRelu(a, s) => acc(
                *a,
                g.zip_map(y, |gv, yv| if yv > F::zero() { gv } else { gv * *s }),
            ),
            Op::Tanh(a) => acc(*a, g.zip_map(y, |gv, yv| gv * (F::one() - yv * yv))),
            Op::Sigmoid(a) => acc(*a, g.zip_map(y, |gv, yv| gv * yv * (F::one() - yv))),
            Op::Reshape(a) => acc(*a, g.clone().reshaped(self.shape(*a))),
            Op::Concat(parts) => {
                let n = y.shape()[0];
                let inner: usize = y.shape()[2..].iter().product();
                let ctot = y.shape()[1];
                let mut off = 0;
                for &p in parts {
                    let cp = self.shape(p)[1];
                    if self.rg(p) {
                        let mut d = Vec::with_capacity(n * cp * inner);
                        for s in 0..n {
                            let base = s * ctot * inner + off * inner;
                            d.extend_from_slice(&g.data()[base..base + cp * inner]);
                        }
                        acc(p, Tensor::new(self.shape(p), d));
                    }
                    off += cp;
                }
            }
            Op::InstanceNorm { x, inv_std } => {
                let (_, _, h, w) = nchw(y.shape());
                let hw = h * w;
                let m = F::c(hw as f64);
                let mut dx = vec![F::zero(); y.len()];
                for (p, &inv) in inv_std.iter().enumerate() {
                    let gp = &g.data()[p * hw..(p + 1) * hw];
                    let yp = &y.data()[p * hw..(p + 1) * hw];
                    let sg: F = gp.iter().copied().sum();
                    let sgy: F = gp.iter().zip(yp).map(|(&a, &b)| a * b).sum();
                    for ((d, &gv), &yv) in dx[p * hw..(p + 1) * hw].iter_mut().zip(gp).zip(yp) {
                        *d = inv / m * (m * gv - sg - yv * sgy);
                    }
                }
                acc(*x, Tensor::new(y.shape(), dx));
            }
            Op::UpsampleNearest2(x) => {
                let (n, c, h, w) = nchw(self.shape(*x));
                let ow = 2 * w;
                let mut dx = vec![F::zero(); n * c * h * w];
                for p in 0..n * c {
                    let gp = &g.data()[p * 4 * h * w..(p + 1) * 4 * h * w];
                    for yy in 0..2 * h {
                        for xx in 0..ow {
                            dx[p * h * w + (yy / 2) * w + xx / 2] += gp[yy * ow + xx];
                        }
                    }
                }
                acc(*x, Tensor::new(self.shape(*x), dx));
            }
            Op::AvgPool2(x) => {
                let (n, c, h, w) = nchw(self.shape(*x));
                let (oh, ow) = (h / 2, w / 2);
                let q = F::c(0.25);
                let mut dx = vec![F::zero(); n * c * h * w];
                for p in 0..n * c {
                    for yy in 0..oh {
                        for xx in 0..ow {
                            let gv = g.data()[p * oh * ow + yy * ow + xx] * q;
                            let i = p * h * w + 2 * yy * w + 2 * xx;
                            dx[i] += gv;
                            dx[i + 1] += gv;
                            dx[i + w] += gv;
                            dx[i + w + 1] += gv;
                        }
                    }
                }
                acc(*x, Tensor::new(self.shape(*x), dx));
            }
            Op::SepFilter { x, kernel, border } => {
                let dx = self.per_plane_t(*x, g, |gp, h, w| {
                    filter::filter_plane_t(gp, h, w, kernel, *border)
                });
                acc(*x, dx);
            }
            Op::Decimate2(x) => {
                let dx = self.per_plane_t(*x, g, filter::decimate2_t);
                acc(*x, dx);
            }
            Op::ZeroInsert2(x) => {
                let dx = self.per_plane_t(*x, g, filter::zero_insert2_t);
                acc(*x, dx);
            }
            Op::Crop(x) => {
                let (oh, ow) = (y.shape()[2], y.shape()[3]);
                let dx = self.per_plane_t(*x, g, |gp, h, w| filter::crop_t(gp, h, w, oh, ow));
                acc(*x, dx);
            }
            Op::Mean(a) => {
                let s = self.shape(*a);
                let n: usize = s.iter().product();
                acc(*a, Tensor::full(s, g.item() / F::c(n as f64)));
            }
            Op::Sum(a) => acc(*a, Tensor::full(self.shape(*a), g.item())),
            Op::Square(a) => acc(*a, g.zip_map(self.value(*a), |gv, av| F::c(2.0) * av * gv)),
            Op::Abs(a) => acc(
                *a,
                g.zip_map(self.value(*a), |gv, av| {
                    if av > F::zero() {
                        gv
                    } else if av < F::zero() {
                        -gv
                    } else {
                        F::zero()
                    }
                }),
            ),
            Op::ChannelUnitNorm { x, norms } => {
                let (n, c, h, w) = nchw(y.shape());
                let hw = h * w;
                let mut dx = vec![F::zero(); y.len()];
                for i in 0..n {
                    let base = i * c * hw;
                    for p in 0..hw {
                        let mut dot = F::zero();
                        for ch in 0..c {
                            let k = base + ch * hw + p;
                            dot += g.data()[k] * y.data()[k];
                        }
                        let nrm = norms[i * hw + p];
                        for ch in 0..c {
                            let k = base + ch * hw + p;
                            dx[k] = (g.data()[k] - y.data()[k] * dot) / nrm;
                        }
                    }
                }
                acc(*x, Tensor::new(y.shape(), dx));
            }
            Op::GlobalAvgPool(x) => {
                let (n, c, h, w) = nchw(self.shape(*x));
                let hw = h * w;
                let d = F::c(hw as f64);
                let mut dx = vec![F::zero(); n * c * hw];
                for p in 0..n * c {
                    let gv = g.data()[p] / d;
                    dx[p * hw..(p + 1) * hw].iter_mut().for_each(|v| *v = gv);
                }
                acc(*x, Tensor::new(self.shape(*x), dx));
            }
            Op::BroadcastHw(x) => {
                let nc: usize = self.shape(*x).iter().product();
                let hw = g.len() / nc.max(1);
                let dx = (0..nc)
                    .map(|p| g.data()[p * hw..(p + 1) * hw].iter().copied().sum())
                    .collect();
                acc(*x, Tensor::new(self.shape(*x), dx));
            }
            Op::SoftmaxCe {
                logits,
                labels,
                probs,
            } => {
                let k = self.shape(*logits)[1];
                let n = labels.len();
                let scale = g.item() / F::c(n as f64);
                let mut d = probs.clone();
                for (i, &l) in labels.iter().enumerate() {
                    d[i * k + l] -= F::one();
                }
                d.iter_mut().for_each(|v| *v *= scale);
                acc(*logits, Tensor::new(self.shape(*logits), d));
            }
            Op::SigmoidFocal {
                logits,
                targets,
                weights,
                gamma,
                norm,
            } => {
                let scale = g.item() / *norm;
                let gm = *gamma;
                let d = self
                    .value(*logits)
                    .data()
                    .iter()
                    .zip(targets)
                    .zip(weights)
                    .map(|((&z, &t), &w)| {
                        if w == F::zero() {
                            return F::zero();
                        }
                        let p = sigmoid(z);
                        let q = F::one() - p;
                        let log_p = -softplus(-z);
                        let log_q = -softplus(z);
                        let dpos = gm * p * q.powf(gm) * log_p - q.powf(gm + F::one());
                        let dneg = -gm * p.powf(gm) * q * log_q + p.powf(gm + F::one());
                        w * (t * dpos + (F::one() - t) * dneg) * scale
                    })
                    .collect();
                acc(*logits, Tensor::new(self.shape(*logits), d));
            }
        }
    }

    fn per_plane_t(
        &self,
        x: Var,
        g: &Tensor<F>,
        f: impl Fn(&[F], usize, usize) -> Vec<F>,
    ) -> Tensor<F> {
        let (n, c, h, w) = nchw(self.shape(x));
        let gs = g.shape();
        let plane = gs[2] * gs[3];
        let mut out = Vec::with_capacity(n * c * h * w);
        for p in 0..n * c {
            out.extend(f(&g.data()[p * plane..(p + 1) * plane], h, w));
        }
        Tensor::new(&[n, c, h, w], out)
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
    params: HashMap<(u64, usize), Var>,
}

impl<F: Float> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads[v.0].as_ref()
    }

    /// Gradients for every parameter of `store`, `None` where unused.
    pub fn for_store(&self, store: &ParamStore<F>) -> Vec<Option<Tensor<F>>> {
        store
            .ids()
            .map(|id| {
                self.params
                    .get(&(store.uid(), id.0))
                    .and_then(|v| self.grads[v.0].clone())
            })
            .collect()
    }
}
