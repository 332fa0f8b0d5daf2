//! Reverse-mode differentiation over the handful of 1D operators the
//! denoiser needs.
//!
//! Nodes are appended in evaluation order, so a reverse sweep over the node
//! list is a valid topological order for backpropagation.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use super::freeu;
use super::params::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

pub type NodeId = usize;

pub const GROUP_NORM_EPS: f64 = 1e-5;

enum Op<T> {
    Input,
    Param(usize),
    Conv { x: NodeId, w: NodeId, b: Option<NodeId>, stride: usize, pad: usize },
    GroupNorm { x: NodeId, gamma: NodeId, beta: NodeId, groups: usize, xhat: Vec<T>, rstd: Vec<T> },
    Silu(NodeId),
    Add(NodeId, NodeId),
    AddChannelBias { x: NodeId, bias: NodeId },
    Concat(NodeId, NodeId),
    Upsample2(NodeId),
    Attention { q: NodeId, k: NodeId, v: NodeId, probs: Vec<T> },
    /// Spectral mask; the operator is symmetric so it is its own adjoint.
    Spectral { x: NodeId, mask: Vec<f64> },
    /// Elementwise gain on the first half of the channels. The gain is
    /// treated as a constant during backpropagation.
    HalfChannelGain { x: NodeId, gain: Vec<T> },
}

struct Node<T> {
    op: Op<T>,
    value: Option<Tensor<T>>,
}

/// Records a forward evaluation against a borrowed parameter store.
pub struct Tape<'p, T> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    pub params: ParamStore<T>,
    inputs: Vec<Option<Tensor<T>>>,
}

impl<T> Gradients<T> {
    /// Gradient with respect to an input node, if it received one.
    pub fn input(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.inputs.get(id).and_then(Option::as_ref)
    }
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> NodeId {
        self.nodes.push(Node { op, value: Some(value) });
        self.nodes.len() - 1
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        match &self.nodes[id].op {
            Op::Param(i) => self.params.get(*i),
            _ => self.nodes[id].value.as_ref().expect("node value"),
        }
    }

    pub fn input(&mut self, t: Tensor<T>) -> NodeId {
        self.push(Op::Input, t)
    }

    pub fn param(&mut self, index: usize) -> NodeId {
        self.nodes.push(Node {
            op: Op::Param(index),
            value: None,
        });
        self.nodes.len() - 1
    }

    /// `w` has dims `[out, in, kernel]`, `b` has dims `[1, out, 1]`.
    pub fn conv1d(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, stride: usize, pad: usize) -> NodeId {
        let xv = self.value(x);
        let wv = self.value(w);
        let [bs, ci, len] = xv.dims();
        let [co, wci, kernel] = wv.dims();
        assert_eq!(ci, wci, "conv input channels");
        let lo = (len + 2 * pad - kernel) / stride + 1;
        let n = bs * lo;
        let col = im2col(xv, kernel, stride, pad, lo);
        let rows = ci * kernel;
        let wd = wv.data();
        let mut prod = vec![T::zero(); co * n];
        for o in 0..co {
            let prow = &mut prod[o * n..(o + 1) * n];
            for j in 0..rows {
                axpy(prow, wd[o * rows + j], &col[j * n..(j + 1) * n]);
            }
        }
        let mut out = Tensor::zeros(bs, co, lo);
        let bias = b.map(|b| self.value(b).data());
        for bi in 0..bs {
            for o in 0..co {
                let src = &prod[o * n + bi * lo..o * n + (bi + 1) * lo];
                let dst = out.row_mut(bi, o);
                match bias {
                    Some(bias) => dst.iter_mut().zip(src).for_each(|(d, s)| *d = *s + bias[o]),
                    None => dst.copy_from_slice(src),
                }
            }
        }
        self.push(Op::Conv { x, w, b, stride, pad }, out)
    }

    pub fn group_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, groups: usize) -> NodeId {
        let xv = self.value(x);
        let [bs, ch, len] = xv.dims();
        assert_eq!(ch % groups, 0, "group count must divide channels");
        let per = ch / groups * len;
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = Tensor::zeros(bs, ch, len);
        let mut xhat = vec![T::zero(); xv.numel()];
        let mut rstd = vec![T::zero(); bs * groups];
        let eps = T::of(GROUP_NORM_EPS);
        let inv_n = T::of(1.0 / per as f64);
        for bi in 0..bs {
            for gi in 0..groups {
                let start = (bi * ch + gi * (ch / groups)) * len;
                let seg = &xv.data()[start..start + per];
                let mean = seg.iter().copied().sum::<T>() * inv_n;
                let var = seg.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() * inv_n;
                let r = T::one() / (var + eps).sqrt();
                rstd[bi * groups + gi] = r;
                for (j, v) in seg.iter().enumerate() {
                    let c = gi * (ch / groups) + j / len;
                    let h = (*v - mean) * r;
                    xhat[start + j] = h;
                    out.data_mut()[start + j] = h * g[c] + b[c];
                }
            }
        }
        self.push(Op::GroupNorm { x, gamma, beta, groups, xhat, rstd }, out)
    }

    pub fn silu(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| v * sigmoid(v)).collect();
        let [b, c, l] = xv.dims();
        self.push(Op::Silu(x), Tensor::from_vec(b, c, l, data))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(Op::Add(a, b), out)
    }

    /// Adds a `[batch, channels, 1]` tensor to every position of `x`.
    pub fn add_channel_bias(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        let bv = self.value(bias);
        assert_eq!(bv.dims(), [out.batch(), out.channels(), 1]);
        for b in 0..out.batch() {
            for c in 0..out.channels() {
                let add = bv.data()[b * out.channels() + c];
                for v in out.row_mut(b, c) {
                    *v += add;
                }
            }
        }
        self.push(Op::AddChannelBias { x, bias }, out)
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.batch(), bv.batch());
        assert_eq!(av.len(), bv.len());
        let (ca, cb, len) = (av.channels(), bv.channels(), av.len());
        let mut data = Vec::with_capacity(av.numel() + bv.numel());
        for bi in 0..av.batch() {
            data.extend_from_slice(av.sample(bi));
            data.extend_from_slice(bv.sample(bi));
        }
        self.push(Op::Concat(a, b), Tensor::from_vec(av.batch(), ca + cb, len, data))
    }

    /// Nearest-neighbour upsampling by 2 along the sequence.
    pub fn upsample2(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let [b, c, l] = xv.dims();
        let mut data = Vec::with_capacity(xv.numel() * 2);
        for v in xv.data() {
            data.push(*v);
            data.push(*v);
        }
        debug_assert_eq!(data.len(), b * c * l * 2);
        self.push(Op::Upsample2(x), Tensor::from_vec(b, c, 2 * l, data))
    }

    /// Single-head scaled dot-product attention over sequence positions.
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId) -> NodeId {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let [bs, ch, len] = qv.dims();
        let scale = T::of(1.0 / (ch as f64).sqrt());
        let mut probs = vec![T::zero(); bs * len * len];
        let mut out = Tensor::zeros(bs, ch, len);
        for b in 0..bs {
            let p = &mut probs[b * len * len..(b + 1) * len * len];
            for c in 0..ch {
                let (qr, kr) = (qv.row(b, c), kv.row(b, c));
                for i in 0..len {
                    let qi = qr[i];
                    for (pj, kj) in p[i * len..(i + 1) * len].iter_mut().zip(kr) {
                        *pj += qi * *kj;
                    }
                }
            }
            for i in 0..len {
                let row = &mut p[i * len..(i + 1) * len];
                let mut max = T::neg_infinity();
                for s in row.iter_mut() {
                    *s *= scale;
                    max = max.max(*s);
                }
                let mut sum = T::zero();
                for s in row.iter_mut() {
                    *s = (*s - max).exp();
                    sum += *s;
                }
                for s in row.iter_mut() {
                    *s /= sum;
                }
            }
            for c in 0..ch {
                let vr = vv.row(b, c);
                let orow = out.row_mut(b, c);
                for i in 0..len {
                    orow[i] = p[i * len..(i + 1) * len].iter().zip(vr).map(|(a, b)| *a * *b).sum();
                }
            }
        }
        self.push(Op::Attention { q, k, v, probs }, out)
    }

    pub fn spectral(&mut self, x: NodeId, s: f64, r_thresh: f64) -> NodeId {
        let xv = self.value(x);
        let mask = freeu::spectral_mask(xv.len(), s, r_thresh);
        let out = apply_spectral(xv, &mask);
        self.push(Op::Spectral { x, mask }, out)
    }

    pub fn backbone_scale(&mut self, x: NodeId, b: f64) -> NodeId {
        let xv = self.value(x);
        let [bs, ch, len] = xv.dims();
        let mut gain = Vec::with_capacity(bs * len);
        for bi in 0..bs {
            let sample: Vec<f64> = xv.sample(bi).iter().map(|v| v.as_f64()).collect();
            gain.extend(freeu::backbone_gain(&sample, ch, b).into_iter().map(T::of));
        }
        let mut out = xv.clone();
        for bi in 0..bs {
            for c in 0..ch / 2 {
                for (v, g) in out.row_mut(bi, c).iter_mut().zip(&gain[bi * len..(bi + 1) * len]) {
                    *v *= *g;
                }
            }
        }
        self.push(Op::HalfChannelGain { x, gain }, out)
    }

    /// Backpropagates `grad` from node `out` to every parameter and input.
    pub fn backward(&self, out: NodeId, grad: Tensor<T>) -> Gradients<T> {
        assert_eq!(grad.dims(), self.value(out).dims(), "seed gradient shape");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut pgrads = self.params.zeros_like();
        grads[out] = Some(grad);
        for id in (0..=out).rev() {
            let Some(g) = grads[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Input => {
                    grads[id] = Some(g);
                }
                Op::Param(i) => pgrads.get_mut(*i).add_assign(&g),
                Op::Conv { x, w, b, stride, pad } => {
                    let (dx, dw, db) = self.conv_backward(*x, *w, *stride, *pad, &g);
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *w, dw);
                    if let Some(b) = b {
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::GroupNorm { x, gamma, beta, groups, xhat, rstd } => {
                    let (dx, dg, db) = self.group_norm_backward(*gamma, *groups, xhat, rstd, &g);
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *gamma, dg);
                    accumulate(&mut grads, *beta, db);
                }
                Op::Silu(x) => {
                    let xv = self.value(*x);
                    let mut dx = g;
                    for (d, &v) in dx.data_mut().iter_mut().zip(xv.data()) {
                        let s = sigmoid(v);
                        *d *= s * (T::one() + v * (T::one() - s));
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::AddChannelBias { x, bias } => {
                    let [bs, ch, _] = g.dims();
                    let mut db = Tensor::zeros(bs, ch, 1);
                    for b in 0..bs {
                        for c in 0..ch {
                            db.data_mut()[b * ch + c] = g.row(b, c).iter().copied().sum();
                        }
                    }
                    accumulate(&mut grads, *bias, db);
                    accumulate(&mut grads, *x, g);
                }
                Op::Concat(a, b) => {
                    let ca = self.value(*a).channels();
                    let [bs, ch, len] = g.dims();
                    let cb = ch - ca;
                    let mut da = Vec::with_capacity(bs * ca * len);
                    let mut dbv = Vec::with_capacity(bs * cb * len);
                    for bi in 0..bs {
                        let s = g.sample(bi);
                        da.extend_from_slice(&s[..ca * len]);
                        dbv.extend_from_slice(&s[ca * len..]);
                    }
                    accumulate(&mut grads, *a, Tensor::from_vec(bs, ca, len, da));
                    accumulate(&mut grads, *b, Tensor::from_vec(bs, cb, len, dbv));
                }
                Op::Upsample2(x) => {
                    let [bs, ch, len] = g.dims();
                    let data = g.data().chunks(2).map(|p| p[0] + p[1]).collect();
                    accumulate(&mut grads, *x, Tensor::from_vec(bs, ch, len / 2, data));
                }
                Op::Attention { q, k, v, probs } => {
                    let (dq, dk, dv) = self.attention_backward(*q, *k, *v, probs, &g);
                    accumulate(&mut grads, *q, dq);
                    accumulate(&mut grads, *k, dk);
                    accumulate(&mut grads, *v, dv);
                }
                Op::Spectral { x, mask } => {
                    let dx = apply_spectral(&g, mask);
                    accumulate(&mut grads, *x, dx);
                }
                Op::HalfChannelGain { x, gain } => {
                    let [bs, ch, len] = g.dims();
                    let mut dx = g;
                    for bi in 0..bs {
                        for c in 0..ch / 2 {
                            for (d, gv) in dx.row_mut(bi, c).iter_mut().zip(&gain[bi * len..(bi + 1) * len]) {
                                *d *= *gv;
                            }
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
            }
        }
        Gradients {
            params: pgrads,
            inputs: grads,
        }
    }

    fn conv_backward(&self, x: NodeId, w: NodeId, stride: usize, pad: usize, g: &Tensor<T>) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
        let (xv, wv) = (self.value(x), self.value(w));
        let [bs, ci, len] = xv.dims();
        let [co, _, kernel] = wv.dims();
        let lo = g.len();
        let n = bs * lo;
        let rows = ci * kernel;
        let col = im2col(xv, kernel, stride, pad, lo);
        let mut gt = vec![T::zero(); co * n];
        for bi in 0..bs {
            for o in 0..co {
                gt[o * n + bi * lo..o * n + (bi + 1) * lo].copy_from_slice(g.row(bi, o));
            }
        }
        let mut dw = Tensor::zeros(co, ci, kernel);
        let mut db = Tensor::zeros(1, co, 1);
        let mut dcol = vec![T::zero(); rows * n];
        let wd = wv.data();
        for o in 0..co {
            let grow = &gt[o * n..(o + 1) * n];
            db.data_mut()[o] = grow.iter().copied().sum::<T>();
            let dwrow = &mut dw.data_mut()[o * rows..(o + 1) * rows];
            for j in 0..rows {
                let crow = &col[j * n..(j + 1) * n];
                dwrow[j] = dot(grow, crow);
                axpy(&mut dcol[j * n..(j + 1) * n], wd[o * rows + j], grow);
            }
        }
        let mut dx = Tensor::zeros(bs, ci, len);
        for c in 0..ci {
            for kk in 0..kernel {
                let (start, end) = valid_range(len, lo, stride, pad, kk);
                let drow = &dcol[(c * kernel + kk) * n..(c * kernel + kk + 1) * n];
                for bi in 0..bs {
                    let dxrow = dx.row_mut(bi, c);
                    for l in start..end {
                        dxrow[l * stride + kk - pad] += drow[bi * lo + l];
                    }
                }
            }
        }
        (dx, dw, db)
    }

    fn group_norm_backward(&self, gamma: NodeId, groups: usize, xhat: &[T], rstd: &[T], g: &Tensor<T>) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
        let [bs, ch, len] = g.dims();
        let gam = self.value(gamma).data();
        let per = ch / groups * len;
        let inv_n = T::of(1.0 / per as f64);
        let mut dx = Tensor::zeros(bs, ch, len);
        let mut dgamma = Tensor::zeros(1, ch, 1);
        let mut dbeta = Tensor::zeros(1, ch, 1);
        for bi in 0..bs {
            for gi in 0..groups {
                let start = (bi * ch + gi * (ch / groups)) * len;
                let mut sum_d = T::zero();
                let mut sum_dx = T::zero();
                for j in 0..per {
                    let c = gi * (ch / groups) + j / len;
                    let gv = g.data()[start + j];
                    let h = xhat[start + j];
                    dgamma.data_mut()[c] += gv * h;
                    dbeta.data_mut()[c] += gv;
                    let d = gv * gam[c];
                    sum_d += d;
                    sum_dx += d * h;
                }
                let r = rstd[bi * groups + gi];
                for j in 0..per {
                    let c = gi * (ch / groups) + j / len;
                    let d = g.data()[start + j] * gam[c];
                    let h = xhat[start + j];
                    dx.data_mut()[start + j] = r * (d - inv_n * sum_d - h * inv_n * sum_dx);
                }
            }
        }
        (dx, dgamma, dbeta)
    }

    fn attention_backward(&self, q: NodeId, k: NodeId, v: NodeId, probs: &[T], g: &Tensor<T>) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let [bs, ch, len] = qv.dims();
        let scale = T::of(1.0 / (ch as f64).sqrt());
        let mut dq = Tensor::zeros(bs, ch, len);
        let mut dk = Tensor::zeros(bs, ch, len);
        let mut dv = Tensor::zeros(bs, ch, len);
        let mut dp = vec![T::zero(); len * len];
        for b in 0..bs {
            let p = &probs[b * len * len..(b + 1) * len * len];
            dp.fill(T::zero());
            for c in 0..ch {
                let (gr, vr) = (g.row(b, c), vv.row(b, c));
                let dvr = dv.row_mut(b, c);
                for i in 0..len {
                    let gi = gr[i];
                    let prow = &p[i * len..(i + 1) * len];
                    for (j, dpj) in dp[i * len..(i + 1) * len].iter_mut().enumerate() {
                        *dpj += gi * vr[j];
                        dvr[j] += prow[j] * gi;
                    }
                }
            }
            // Softmax backward, folded with the score scale.
            for i in 0..len {
                let prow = &p[i * len..(i + 1) * len];
                let drow = &mut dp[i * len..(i + 1) * len];
                let dot: T = prow.iter().zip(drow.iter()).map(|(a, b)| *a * *b).sum();
                for (d, pv) in drow.iter_mut().zip(prow) {
                    *d = *pv * (*d - dot) * scale;
                }
            }
            for c in 0..ch {
                let (qr, kr) = (qv.row(b, c), kv.row(b, c));
                let mut dqr = vec![T::zero(); len];
                let mut dkr = vec![T::zero(); len];
                for i in 0..len {
                    let drow = &dp[i * len..(i + 1) * len];
                    let mut acc = T::zero();
                    for j in 0..len {
                        acc += drow[j] * kr[j];
                        dkr[j] += drow[j] * qr[i];
                    }
                    dqr[i] = acc;
                }
                dq.row_mut(b, c).copy_from_slice(&dqr);
                dk.row_mut(b, c).copy_from_slice(&dkr);
            }
        }
        (dq, dk, dv)
    }
}

fn apply_spectral<T: Real>(x: &Tensor<T>, mask: &[f64]) -> Tensor<T> {
    let mut out = x.clone();
    for b in 0..x.batch() {
        for c in 0..x.channels() {
            let row: Vec<f64> = x.row(b, c).iter().map(|v| v.as_f64()).collect();
            let (filtered, _) = freeu::spectral_filter(&row, mask);
            for (o, f) in out.row_mut(b, c).iter_mut().zip(filtered) {
                *o = T::of(f);
            }
        }
    }
    out
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], id: NodeId, g: Tensor<T>) {
    match &mut grads[id] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[inline]
fn sigmoid<T: Real>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

/// Rows indexed by `c * kernel + kk`, columns by `b * lo + l`; taps that
/// fall into the padding are zero.
fn im2col<T: Real>(x: &Tensor<T>, kernel: usize, stride: usize, pad: usize, lo: usize) -> Vec<T> {
    let [bs, ci, len] = x.dims();
    let n = bs * lo;
    let mut col = vec![T::zero(); ci * kernel * n];
    for c in 0..ci {
        for kk in 0..kernel {
            let (start, end) = valid_range(len, lo, stride, pad, kk);
            let crow = &mut col[(c * kernel + kk) * n..(c * kernel + kk + 1) * n];
            for bi in 0..bs {
                let xrow = x.row(bi, c);
                let dst = &mut crow[bi * lo..(bi + 1) * lo];
                if stride == 1 {
                    if start < end {
                        let off = start + kk - pad;
                        dst[start..end].copy_from_slice(&xrow[off..off + end - start]);
                    }
                } else {
                    for l in start..end {
                        dst[l] = xrow[l * stride + kk - pad];
                    }
                }
            }
        }
    }
    col
}

#[inline]
fn axpy<T: Real>(y: &mut [T], a: T, x: &[T]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += a * *xv;
    }
}

/// Dot product with eight independent accumulators.
#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ac, bc) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ar, br) = (ac.remainder(), bc.remainder());
    for (x, y) in ac.zip(bc) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ar.iter().zip(br) {
        tail += *x * *y;
    }
    acc.iter().copied().sum::<T>() + tail
}

/// Output positions `[start, end)` whose tap `kk` reads inside the input.
#[inline]
fn valid_range(len: usize, out_len: usize, stride: usize, pad: usize, kk: usize) -> (usize, usize) {
    // Need 0 <= l * stride + kk - pad < len.
    let start = if kk >= pad { 0 } else { (pad - kk).div_ceil(stride) };
    let limit = len + pad - kk; // l * stride < limit
    let end = if limit == 0 { 0 } else { (limit - 1) / stride + 1 };
    (start.min(out_len), end.min(out_len))
}
