//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] borrows a [`ParamStore`] and records every operation applied
//! during a forward pass. [`Tape::backward`] walks the record in reverse and
//! returns gradients for every parameter that took part.

mod attention;
mod conv;
mod norm;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, ImageTensor, Real, Result, Shape4};

pub use attention::{attention_groups, attention_probs};
pub use conv::Padding;

/// Dense row-major tensor of arbitrary rank.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::shape(len, data.len()));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); len],
        }
    }
}

impl<T: Real> From<ImageTensor<T>> for Tensor<T> {
    fn from(img: ImageTensor<T>) -> Self {
        Self {
            shape: img.shape().dims().to_vec(),
            data: img.into_data(),
        }
    }
}

impl<T: Real> TryFrom<Tensor<T>> for ImageTensor<T> {
    type Error = Error;

    fn try_from(t: Tensor<T>) -> Result<Self> {
        if t.shape.len() != 4 {
            return Err(Error::InvalidShape(alloc::format!("rank {} tensor", t.shape.len())));
        }
        let s = &t.shape;
        ImageTensor::from_vec(Shape4::new(s[0], s[1], s[2], s[3]), t.data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// Flat, ordered parameter storage. Names are unique and follow the module
/// path (`down.0.block.1.conv1.weight`).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<T>) -> ParamId {
        let name = name.into();
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        debug_assert!(self.params.iter().all(|p| p.name != name), "duplicate param {name}");
        self.params.push(Param { name, shape, data });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Same names and shapes, in the same order.
    pub fn same_layout(&self, other: &Self) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: p.data.iter().map(|v| U::lit(v.as_f64())).collect(),
                })
                .collect(),
        }
    }
}

/// Per-parameter gradients; `None` where a parameter was unused.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn iter(&self) -> impl Iterator<Item = Option<&[T]>> {
        self.grads.iter().map(|g| g.as_deref())
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .map(|v| v.as_f64() * v.as_f64())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: T) {
        for g in self.grads.iter_mut().flatten() {
            for v in g.iter_mut() {
                *v *= factor;
            }
        }
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Norm used by [`Tape::lp_loss`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossNorm {
    L1,
    L2,
}

impl LossNorm {
    pub fn from_p(p: u32) -> Result<Self> {
        match p {
            1 => Ok(LossNorm::L1),
            2 => Ok(LossNorm::L2),
            _ => Err(Error::InvalidArgument(alloc::format!("loss exponent p={p}, expected 1 or 2"))),
        }
    }

    pub fn p(self) -> u32 {
        match self {
            LossNorm::L1 => 1,
            LossNorm::L2 => 2,
        }
    }

    #[inline]
    pub fn apply(self, r: f64) -> f64 {
        match self {
            LossNorm::L1 => r.abs(),
            LossNorm::L2 => r * r,
        }
    }
}

enum Op<T> {
    Input,
    Param(ParamId),
    Add(Var, Var),
    AddChannel { x: Var, bias: Var },
    Scale(Var, T),
    Silu(Var),
    Conv2d { x: Var, w: Var, b: Option<Var>, dilation: usize, padding: Padding },
    GroupNorm { x: Var, gamma: Var, beta: Var, groups: usize, stats: Vec<(T, T)> },
    AvgPool2(Var),
    Upsample2(Var),
    Concat(Var, Var),
    Linear { x: Var, w: Var, b: Var },
    Attention { q: Var, k: Var, v: Var, local: bool, probs: Vec<Vec<T>> },
    GlobalMeanPool(Var),
    LpLoss { pred: Var, residual: Vec<T>, mask: Option<Vec<T>>, norm: LossNorm, count: T },
    SoftmaxXent { logits: Var, labels: Vec<usize>, probs: Vec<T> },
}

struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
}

pub struct Tape<'p, T: Real> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
}

fn dims4(shape: &[usize]) -> (usize, usize, usize, usize) {
    assert_eq!(shape.len(), 4, "expected NCHW tensor, got {shape:?}");
    (shape[0], shape[1], shape[2], shape[3])
}

fn add_into<T: Real>(slot: &mut Option<Vec<T>>, upd: &[T]) {
    match slot {
        Some(g) => {
            for (a, &b) in g.iter_mut().zip(upd) {
                *a += b;
            }
        }
        None => *slot = Some(upd.to_vec()),
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>) -> Var {
        debug_assert!(matches!(op, Op::Param(_)) || shape.iter().product::<usize>() == value.len());
        self.nodes.push(Node { shape, value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[T] {
        match self.nodes[v.0].op {
            Op::Param(id) => &self.params.get(id).data,
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        Tensor {
            shape: self.shape(v).to_vec(),
            data: self.value(v).to_vec(),
        }
    }

    pub fn image(&self, v: Var) -> Result<ImageTensor<T>> {
        ImageTensor::try_from(self.tensor(v))
    }

    pub fn scalar(&self, v: Var) -> T {
        let val = self.value(v);
        assert_eq!(val.len(), 1, "not a scalar");
        val[0]
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t.shape, t.data, Op::Input)
    }

    pub fn input_image(&mut self, img: ImageTensor<T>) -> Var {
        self.input(img.into())
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let shape = self.params.get(id).shape.clone();
        let v = self.push(shape, Vec::new(), Op::Param(id));
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let value = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        self.push(self.shape(a).to_vec(), value, Op::Add(a, b))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let value = self.value(a).iter().map(|&x| x * s).collect();
        self.push(self.shape(a).to_vec(), value, Op::Scale(a, s))
    }

    /// `x[n, c, :, :] += bias[n, c]`.
    pub fn add_channel(&mut self, x: Var, bias: Var) -> Var {
        let (n, c, h, w) = dims4(self.shape(x));
        assert_eq!(self.shape(bias), &[n, c], "channel bias shape");
        let hw = h * w;
        let mut value = self.value(x).to_vec();
        let bv = self.value(bias);
        for (i, chunk) in value.chunks_mut(hw).enumerate() {
            let b = bv[i];
            chunk.iter_mut().for_each(|v| *v += b);
        }
        self.push(self.shape(x).to_vec(), value, Op::AddChannel { x, bias })
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let value = self.value(x).iter().map(|&v| v * sigmoid(v)).collect();
        self.push(self.shape(x).to_vec(), value, Op::Silu(x))
    }

    /// Stride-1 "same" convolution; `w` is `[out, in, k, k]` with odd `k`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, dilation: usize, padding: Padding) -> Var {
        let (n, c, h, wd) = dims4(self.shape(x));
        let (o, ci, k, k2) = dims4(self.shape(w));
        assert!(ci == c && k == k2 && k % 2 == 1, "conv weight {:?} vs input channels {c}", self.shape(w));
        let geom = conv::Geometry { c, h, w: wd, k, dilation, padding };
        let bias = b.map(|b| self.value(b));
        let value = conv::forward(&geom, n, o, self.value(x), self.value(w), bias);
        self.push(vec![n, o, h, wd], value, Op::Conv2d { x, w, b, dilation, padding })
    }

    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Var {
        let (n, c, h, w) = dims4(self.shape(x));
        assert!(c % groups == 0, "{c} channels not divisible into {groups} groups");
        let (value, stats) = norm::forward(self.value(x), self.value(gamma), self.value(beta), n, c, h * w, groups);
        self.push(self.shape(x).to_vec(), value, Op::GroupNorm { x, gamma, beta, groups, stats })
    }

    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let (n, c, h, w) = dims4(self.shape(x));
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 on odd size {h}x{w}");
        let (ho, wo) = (h / 2, w / 2);
        let xv = self.value(x);
        let mut value = vec![T::zero(); n * c * ho * wo];
        let quarter = T::lit(0.25);
        for p in 0..n * c {
            let src = &xv[p * h * w..(p + 1) * h * w];
            let dst = &mut value[p * ho * wo..(p + 1) * ho * wo];
            for y in 0..ho {
                for xx in 0..wo {
                    let i = 2 * y * w + 2 * xx;
                    dst[y * wo + xx] = (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]) * quarter;
                }
            }
        }
        self.push(vec![n, c, ho, wo], value, Op::AvgPool2(x))
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let (n, c, h, w) = dims4(self.shape(x));
        let (ho, wo) = (2 * h, 2 * w);
        let xv = self.value(x);
        let mut value = vec![T::zero(); n * c * ho * wo];
        for p in 0..n * c {
            let src = &xv[p * h * w..(p + 1) * h * w];
            let dst = &mut value[p * ho * wo..(p + 1) * ho * wo];
            for y in 0..ho {
                for xx in 0..wo {
                    dst[y * wo + xx] = src[(y / 2) * w + xx / 2];
                }
            }
        }
        self.push(vec![n, c, ho, wo], value, Op::Upsample2(x))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Var {
        let (n, ca, h, w) = dims4(self.shape(a));
        let (nb, cb, hb, wb) = dims4(self.shape(b));
        assert!(n == nb && h == hb && w == wb, "concat spatial mismatch");
        let (la, lb) = (ca * h * w, cb * h * w);
        let (av, bv) = (self.value(a), self.value(b));
        let mut value = Vec::with_capacity(n * (la + lb));
        for i in 0..n {
            value.extend_from_slice(&av[i * la..(i + 1) * la]);
            value.extend_from_slice(&bv[i * lb..(i + 1) * lb]);
        }
        self.push(vec![n, ca + cb, h, w], value, Op::Concat(a, b))
    }

    /// `x [n, f_in] -> [n, f_out]` with `w [f_out, f_in]`, `b [f_out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xs = self.shape(x);
        assert_eq!(xs.len(), 2, "linear expects [n, f]");
        let (n, fi) = (xs[0], xs[1]);
        let ws = self.shape(w);
        assert_eq!(ws[1], fi, "linear weight {ws:?} vs input width {fi}");
        let fo = ws[0];
        let mut value = vec![T::zero(); n * fo];
        {
            let bv = self.value(b);
            for row in value.chunks_mut(fo) {
                row.copy_from_slice(bv);
            }
        }
        T::gemm(n, fi, fo, T::one(), self.value(x), false, self.value(w), true, T::one(), &mut value);
        self.push(vec![n, fo], value, Op::Linear { x, w, b })
    }

    /// Single-head dot-product attention over spatial positions. With
    /// `local`, positions only attend within their own quadrant of a 2x2
    /// block grid.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, local: bool) -> Var {
        let shape = self.shape(q).to_vec();
        assert_eq!(shape, self.shape(k));
        assert_eq!(shape, self.shape(v));
        let (n, c, h, w) = dims4(&shape);
        let (value, probs) =
            attention::forward(self.value(q), self.value(k), self.value(v), n, c, h, w, local);
        self.push(shape, value, Op::Attention { q, k, v, local, probs })
    }

    pub fn global_mean_pool(&mut self, x: Var) -> Var {
        let (n, c, h, w) = dims4(self.shape(x));
        let inv = T::lit(1.0 / (h * w) as f64);
        let value = self.value(x).chunks(h * w).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        self.push(vec![n, c], value, Op::GlobalMeanPool(x))
    }

    /// Mean of `|pred - target|^p` over the elements where `mask == 1`
    /// (all elements without a mask). An empty mask gives a zero loss.
    pub fn lp_loss(&mut self, pred: Var, target: &[T], mask: Option<&[T]>, norm: LossNorm) -> Var {
        let pv = self.value(pred);
        assert_eq!(pv.len(), target.len(), "loss target length");
        let residual: Vec<T> = pv.iter().zip(target).map(|(&a, &b)| a - b).collect();
        let (sum, count) = match mask {
            Some(m) => {
                assert_eq!(m.len(), pv.len(), "loss mask length");
                let mut s = 0.0;
                let mut cnt = 0.0;
                for (r, &mv) in residual.iter().zip(m) {
                    if mv != T::zero() {
                        s += mv.as_f64() * norm.apply(r.as_f64());
                        cnt += mv.as_f64();
                    }
                }
                (s, cnt)
            }
            None => (residual.iter().map(|r| norm.apply(r.as_f64())).sum(), residual.len() as f64),
        };
        let loss = if count > 0.0 { sum / count } else { 0.0 };
        self.push(
            vec![1],
            vec![T::lit(loss)],
            Op::LpLoss {
                pred,
                residual,
                mask: mask.map(|m| m.to_vec()),
                norm,
                count: T::lit(count),
            },
        )
    }

    /// Mean cross-entropy of `logits [n, k]` against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Var {
        let s = self.shape(logits);
        let (n, k) = (s[0], s[1]);
        assert_eq!(labels.len(), n);
        let lv = self.value(logits);
        let mut probs = vec![T::zero(); n * k];
        let mut loss = 0.0;
        for i in 0..n {
            let row = &lv[i * k..(i + 1) * k];
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for j in 0..k {
                let e = (row[j] - m).exp();
                probs[i * k + j] = e;
                z += e;
            }
            for j in 0..k {
                probs[i * k + j] /= z;
            }
            loss -= probs[i * k + labels[i]].as_f64().max(1e-300).ln();
        }
        loss /= n as f64;
        self.push(
            vec![1],
            vec![T::lit(loss)],
            Op::SoftmaxXent { logits, labels: labels.to_vec(), probs },
        )
    }

    /// Reverse pass from a scalar loss node.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        self.backward_with_seed(loss, &[T::one()])
    }

    /// Reverse pass seeded with an arbitrary upstream gradient for `out`.
    pub fn backward_with_seed(&self, out: Var, seed: &[T]) -> Gradients<T> {
        assert_eq!(seed.len(), self.value(out).len(), "seed length");
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(out.0 + 1, || None);
        grads[out.0] = Some(seed.to_vec());
        let mut param_grads: Vec<Option<Vec<T>>> = vec![None; self.params.len()];

        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => add_into(&mut param_grads[id.0], &g),
                Op::Add(a, b) => {
                    add_into(&mut grads[a.0], &g);
                    add_into(&mut grads[b.0], &g);
                }
                Op::Scale(a, s) => {
                    let d: Vec<T> = g.iter().map(|&v| v * *s).collect();
                    add_into(&mut grads[a.0], &d);
                }
                Op::AddChannel { x, bias } => {
                    let (_, _, h, w) = dims4(&node.shape);
                    let db: Vec<T> = g.chunks(h * w).map(|c| c.iter().copied().sum()).collect();
                    add_into(&mut grads[x.0], &g);
                    add_into(&mut grads[bias.0], &db);
                }
                Op::Silu(x) => {
                    let d: Vec<T> = self
                        .value(*x)
                        .iter()
                        .zip(&g)
                        .map(|(&v, &gv)| {
                            let s = sigmoid(v);
                            gv * s * (T::one() + v * (T::one() - s))
                        })
                        .collect();
                    add_into(&mut grads[x.0], &d);
                }
                Op::Conv2d { x, w, b, dilation, padding } => {
                    let (n, c, h, wd) = dims4(self.shape(*x));
                    let (o, _, k, _) = dims4(self.shape(*w));
                    let geom = conv::Geometry { c, h, w: wd, k, dilation: *dilation, padding: *padding };
                    let (dx, dw, db) = conv::backward(&geom, n, o, self.value(*x), self.value(*w), &g);
                    add_into(&mut grads[x.0], &dx);
                    add_into(&mut grads[w.0], &dw);
                    if let Some(b) = b {
                        add_into(&mut grads[b.0], &db);
                    }
                }
                Op::GroupNorm { x, gamma, beta, groups, stats } => {
                    let (n, c, h, w) = dims4(self.shape(*x));
                    let (dx, dg, db) =
                        norm::backward(self.value(*x), self.value(*gamma), &g, stats, n, c, h * w, *groups);
                    add_into(&mut grads[x.0], &dx);
                    add_into(&mut grads[gamma.0], &dg);
                    add_into(&mut grads[beta.0], &db);
                }
                Op::AvgPool2(x) => {
                    let (n, c, h, w) = dims4(self.shape(*x));
                    let (ho, wo) = (h / 2, w / 2);
                    let mut dx = vec![T::zero(); n * c * h * w];
                    let quarter = T::lit(0.25);
                    for p in 0..n * c {
                        for y in 0..ho {
                            for xx in 0..wo {
                                let gv = g[p * ho * wo + y * wo + xx] * quarter;
                                let base = p * h * w + 2 * y * w + 2 * xx;
                                dx[base] += gv;
                                dx[base + 1] += gv;
                                dx[base + w] += gv;
                                dx[base + w + 1] += gv;
                            }
                        }
                    }
                    add_into(&mut grads[x.0], &dx);
                }
                Op::Upsample2(x) => {
                    let (n, c, h, w) = dims4(self.shape(*x));
                    let wo = 2 * w;
                    let mut dx = vec![T::zero(); n * c * h * w];
                    for p in 0..n * c {
                        for y in 0..2 * h {
                            for xx in 0..wo {
                                dx[p * h * w + (y / 2) * w + xx / 2] += g[p * 4 * h * w + y * wo + xx];
                            }
                        }
                    }
                    add_into(&mut grads[x.0], &dx);
                }
                Op::Concat(a, b) => {
                    let (n, ca, h, w) = dims4(self.shape(*a));
                    let cb = self.shape(*b)[1];
                    let (la, lb) = (ca * h * w, cb * h * w);
                    let mut da = Vec::with_capacity(n * la);
                    let mut dbv = Vec::with_capacity(n * lb);
                    for chunk in g.chunks(la + lb) {
                        da.extend_from_slice(&chunk[..la]);
                        dbv.extend_from_slice(&chunk[la..]);
                    }
                    add_into(&mut grads[a.0], &da);
                    add_into(&mut grads[b.0], &dbv);
                }
                Op::Linear { x, w, b } => {
                    let (n, fi) = (self.shape(*x)[0], self.shape(*x)[1]);
                    let fo = self.shape(*w)[0];
                    let mut dx = vec![T::zero(); n * fi];
                    T::gemm(n, fo, fi, T::one(), &g, false, self.value(*w), false, T::zero(), &mut dx);
                    let mut dw = vec![T::zero(); fo * fi];
                    T::gemm(fo, n, fi, T::one(), &g, true, self.value(*x), false, T::zero(), &mut dw);
                    let mut db = vec![T::zero(); fo];
                    for row in g.chunks(fo) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    add_into(&mut grads[x.0], &dx);
                    add_into(&mut grads[w.0], &dw);
                    add_into(&mut grads[b.0], &db);
                }
                Op::Attention { q, k, v, local, probs } => {
                    let (n, c, h, w) = dims4(&node.shape);
                    let (dq, dk, dv) = attention::backward(
                        self.value(*q),
                        self.value(*k),
                        self.value(*v),
                        &g,
                        probs,
                        n,
                        c,
                        h,
                        w,
                        *local,
                    );
                    add_into(&mut grads[q.0], &dq);
                    add_into(&mut grads[k.0], &dk);
                    add_into(&mut grads[v.0], &dv);
                }
                Op::GlobalMeanPool(x) => {
                    let (_, _, h, w) = dims4(self.shape(*x));
                    let inv = T::lit(1.0 / (h * w) as f64);
                    let mut dx = Vec::with_capacity(g.len() * h * w);
                    for &gv in &g {
                        dx.extend(core::iter::repeat_n(gv * inv, h * w));
                    }
                    add_into(&mut grads[x.0], &dx);
                }
                Op::LpLoss { pred, residual, mask, norm, count } => {
                    let up = g[0];
                    let mut d: Vec<T> = if *count > T::zero() {
                        let scale = up / *count;
                        residual
                            .iter()
                            .map(|&r| match norm {
                                LossNorm::L2 => T::lit(2.0) * r * scale,
                                LossNorm::L1 => {
                                    if r > T::zero() {
                                        scale
                                    } else if r < T::zero() {
                                        -scale
                                    } else {
                                        T::zero()
                                    }
                                }
                            })
                            .collect()
                    } else {
                        vec![T::zero(); residual.len()]
                    };
                    if let Some(m) = mask {
                        for (dv, &mv) in d.iter_mut().zip(m) {
                            *dv = if mv == T::zero() { T::zero() } else { *dv * mv };
                        }
                    }
                    add_into(&mut grads[pred.0], &d);
                }
                Op::SoftmaxXent { logits, labels, probs } => {
                    let k = self.shape(*logits)[1];
                    let n = labels.len();
                    let scale = g[0] / T::lit(n as f64);
                    let mut d = probs.clone();
                    for (i, &l) in labels.iter().enumerate() {
                        d[i * k + l] -= T::one();
                    }
                    d.iter_mut().for_each(|v| *v *= scale);
                    add_into(&mut grads[logits.0], &d);
                }
            }
        }
        Gradients { grads: param_grads }
    }
}

#[cfg(test)]
mod tests;
