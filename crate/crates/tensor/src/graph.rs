use std::collections::HashMap;
use std::rc::Rc;

use crate::kernels::{conv2d_backward, conv2d_forward, gemm, ConvGeom};
use crate::{ParamId, ParamStore, SpatialMap, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Square(Var),
    Sqrt(Var),
    Exp(Var),
    Abs(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Silu(Var),
    Clamp(Var, f64, f64),
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    GroupNorm { x: Var, gamma: Var, beta: Var, groups: usize, stats: Rc<Vec<(f64, f64)>> },
    AddChannelBias(Var, Var),
    PixelShuffle(Var, usize),
    PixelUnshuffle(Var, usize),
    ConcatChannels(Vec<Var>),
    SliceChannels(Var, usize),
    ConcatBatch(Vec<Var>),
    Mean(Var),
    Sum(Var),
    Spatial(Var, Vec<Rc<SpatialMap>>),
    MatMul(Var, Var),
    Transpose(Var),
    Softmax(Var),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode tape over [`Tensor`] values.
///
/// Values are computed eagerly as ops are recorded. A graph built with
/// [`Graph::inference`] binds parameters without gradient tracking, so no
/// backward bookkeeping is ever needed for it.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    bound: HashMap<(u64, ParamId), Var>,
    track_params: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bound: HashMap::new(),
            track_params: true,
        }
    }

    /// A graph whose parameters never require gradients.
    pub fn inference() -> Self {
        Self {
            track_params: false,
            ..Self::new()
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Input that gradients are requested for.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Copies the value of `v` into a fresh constant, cutting the tape.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    /// Binds parameter `id` of `store`; repeated binds return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let key = (store.tag(), id);
        if let Some(&v) = self.bound.get(&key) {
            return v;
        }
        let rg = self.track_params && store.get(id).trainable;
        let v = self.push(store.value(id).clone(), Op::Param, rg);
        self.bound.insert(key, v);
        v
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(x).map(f);
        let rg = self.rg(x);
        self.push(v, op, rg)
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) {
        assert_eq!(self.shape(a), self.shape(b), "{op}: shape mismatch");
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        self.unary(x, |v| v * k, Op::Scale(x, k))
    }

    pub fn add_scalar(&mut self, x: Var, k: f64) -> Var {
        self.unary(x, |v| v + k, Op::AddScalar(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, f64::sqrt, Op::Sqrt(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, f64::abs, Op::Abs(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(x, |v| if v > 0.0 { v } else { slope * v }, Op::LeakyRelu(x, slope))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v / (1.0 + (-v).exp()), Op::Silu(x))
    }

    /// Clamps into `[lo, hi]`; gradient passes only where the input is inside.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp(x, lo, hi))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).mean());
        let rg = self.rg(x);
        self.push(v, Op::Mean(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(v, Op::Sum(x), rg)
    }

    /// Zero-padded 2-D convolution; `w` is `cout×cin×kh×kw`, `b` is `[cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let (n, cin, h, wd) = self.value(x).dims4().expect("conv2d input rank");
        let (cout, wcin, kh, kw) = self.value(w).dims4().expect("conv2d weight rank");
        assert_eq!(cin, wcin, "conv2d: input has {cin} channels, weight expects {wcin}");
        let geom = ConvGeom { cin, h, w: wd, kh, kw, stride, pad };
        let out = conv2d_forward(
            &geom,
            n,
            cout,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let shape = [n, cout, geom.out_h(), geom.out_w()];
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(Tensor::from_vec(&shape, out).unwrap(), Op::Conv2d { x, w, b, geom }, rg)
    }

    /// Group normalisation with per-channel affine `gamma`, `beta` (`[C]`).
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize, eps: f64) -> Var {
        let (n, c, h, w) = self.value(x).dims4().expect("group_norm rank");
        assert!(c % groups == 0, "group_norm: {c} channels not divisible by {groups} groups");
        let cg = c / groups;
        let m = cg * h * w;
        let xv = self.value(x).data();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut out = vec![0.0; xv.len()];
        let mut stats = Vec::with_capacity(n * groups);
        for b in 0..n {
            for g in 0..groups {
                let start = (b * c + g * cg) * h * w;
                let slice = &xv[start..start + m];
                let mean = slice.iter().sum::<f64>() / m as f64;
                let var = slice.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
                let rstd = 1.0 / (var + eps).sqrt();
                stats.push((mean, rstd));
                for ci in 0..cg {
                    let ch = g * cg + ci;
                    let off = start + ci * h * w;
                    for i in off..off + h * w {
                        out[i] = (xv[i] - mean) * rstd * gv[ch] + bv[ch];
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let t = Tensor::from_vec(&[n, c, h, w], out).unwrap();
        self.push(
            t,
            Op::GroupNorm { x, gamma, beta, groups, stats: Rc::new(stats) },
            rg,
        )
    }

    /// Adds `b` (`[1|N, C, 1, 1]`) to every pixel of `x` (`[N, C, H, W]`).
    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4().expect("add_channel_bias rank");
        let (bn, bc, _, _) = self.value(b).dims4().expect("bias rank");
        assert!(bc == c && (bn == 1 || bn == n), "add_channel_bias: bias shape");
        let bv = self.value(b).data().to_vec();
        let mut out = self.value(x).clone();
        for (i, chunk) in out.data_mut().chunks_mut(h * w).enumerate() {
            let (bi, ci) = (i / c, i % c);
            let k = bv[if bn == 1 { ci } else { bi * c + ci }];
            chunk.iter_mut().for_each(|v| *v += k);
        }
        let rg = self.rg(x) || self.rg(b);
        self.push(out, Op::AddChannelBias(x, b), rg)
    }

    /// `[N, C·u², H, W] → [N, C, H·u, W·u]`.
    pub fn pixel_shuffle(&mut self, x: Var, u: usize) -> Var {
        let out = pixel_shuffle(self.value(x), u);
        let rg = self.rg(x);
        self.push(out, Op::PixelShuffle(x, u), rg)
    }

    /// `[N, C, H, W] → [N, C·u², H/u, W/u]`.
    pub fn pixel_unshuffle(&mut self, x: Var, u: usize) -> Var {
        let out = pixel_unshuffle(self.value(x), u);
        let rg = self.rg(x);
        self.push(out, Op::PixelUnshuffle(x, u), rg)
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Var {
        let (n, _, h, w) = self.value(xs[0]).dims4().expect("concat rank");
        let mut ctot = 0;
        for &x in xs {
            let (xn, xc, xh, xw) = self.value(x).dims4().expect("concat rank");
            assert_eq!((xn, xh, xw), (n, h, w), "concat_channels: spatial mismatch");
            ctot += xc;
        }
        let mut out = Vec::with_capacity(n * ctot * h * w);
        for b in 0..n {
            for &x in xs {
                let t = self.value(x);
                let c = t.shape()[1];
                out.extend_from_slice(&t.data()[b * c * h * w..(b + 1) * c * h * w]);
            }
        }
        let rg = xs.iter().any(|&x| self.rg(x));
        let t = Tensor::from_vec(&[n, ctot, h, w], out).unwrap();
        self.push(t, Op::ConcatChannels(xs.to_vec()), rg)
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (n, c, h, w) = self.value(x).dims4().expect("slice rank");
        assert!(start + len <= c, "slice_channels out of range");
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * len * h * w);
        for b in 0..n {
            let off = (b * c + start) * h * w;
            out.extend_from_slice(&src[off..off + len * h * w]);
        }
        let rg = self.rg(x);
        let t = Tensor::from_vec(&[n, len, h, w], out).unwrap();
        self.push(t, Op::SliceChannels(x, start), rg)
    }

    pub fn concat_batch(&mut self, xs: &[Var]) -> Var {
        let vals: Vec<Tensor> = xs.iter().map(|&x| self.value(x).clone()).collect();
        let t = Tensor::stack_batch(&vals).expect("concat_batch shapes");
        let rg = xs.iter().any(|&x| self.rg(x));
        self.push(t, Op::ConcatBatch(xs.to_vec()), rg)
    }

    /// Applies a fixed spatial operator to every plane. `maps` holds either
    /// one map shared by the batch or one per batch item.
    pub fn spatial(&mut self, x: Var, maps: Vec<Rc<SpatialMap>>) -> Var {
        let (n, c, h, w) = self.value(x).dims4().expect("spatial rank");
        assert!(maps.len() == 1 || maps.len() == n, "spatial: map count");
        let (oh, ow) = maps[0].out_dims();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for b in 0..n {
            let m = &maps[if maps.len() == 1 { 0 } else { b }];
            assert_eq!(m.in_dims(), (h, w), "spatial: map input dims");
            assert_eq!(m.out_dims(), (oh, ow), "spatial: map output dims");
            let src = &self.value(x).data()[b * c * h * w..(b + 1) * c * h * w];
            out.extend(m.apply(src, c));
        }
        let rg = self.rg(x);
        let t = Tensor::from_vec(&[n, c, oh, ow], out).unwrap();
        self.push(t, Op::Spatial(x, maps), rg)
    }

    /// Batched matrix product `[B, M, K] × [B|1, K, N]`; either operand may
    /// have batch 1 and is then broadcast.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ba, m, k) = dims3(self.value(a));
        let (bb, kb, n) = dims3(self.value(b));
        assert_eq!(k, kb, "matmul: inner dims");
        assert!(ba == bb || ba == 1 || bb == 1, "matmul: batch dims");
        let bo = ba.max(bb);
        let mut out = vec![0.0; bo * m * n];
        for i in 0..bo {
            let av = &self.value(a).data()[(if ba == 1 { 0 } else { i }) * m * k..][..m * k];
            let bv = &self.value(b).data()[(if bb == 1 { 0 } else { i }) * k * n..][..k * n];
            gemm(m, k, n, av, (k as isize, 1), bv, (n as isize, 1), 0.0, &mut out[i * m * n..(i + 1) * m * n]);
        }
        let rg = self.rg(a) || self.rg(b);
        let t = Tensor::from_vec(&[bo, m, n], out).unwrap();
        self.push(t, Op::MatMul(a, b), rg)
    }

    /// Swaps the last two axes of a rank-3 tensor.
    pub fn transpose(&mut self, x: Var) -> Var {
        let out = transpose3(self.value(x));
        let rg = self.rg(x);
        self.push(out, Op::Transpose(x), rg)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let last = *t.shape().last().unwrap();
        let mut out = t.clone();
        for row in out.data_mut().chunks_mut(last) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        let rg = self.rg(x);
        self.push(out, Op::Softmax(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let t = self.value(x).reshape(shape).expect("reshape element count");
        let rg = self.rg(x);
        self.push(t, Op::Reshape(x), rg)
    }

    /// Runs reverse-mode differentiation from scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).numel(), 1, "backward needs a scalar");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, || g.clone());
                self.acc(grads, *b, || g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, || g.clone());
                self.acc(grads, *b, || g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                self.acc(grads, *a, || g.zip_map(self.value(*b), |x, y| x * y));
                self.acc(grads, *b, || g.zip_map(self.value(*a), |x, y| x * y));
            }
            Op::Scale(x, k) => self.acc(grads, *x, || g.map(|v| v * k)),
            Op::AddScalar(x) => self.acc(grads, *x, || g.clone()),
            Op::Square(x) => self.acc(grads, *x, || g.zip_map(self.value(*x), |d, v| 2.0 * v * d)),
            Op::Sqrt(x) => self.acc(grads, *x, || g.zip_map(out, |d, y| 0.5 * d / y)),
            Op::Exp(x) => self.acc(grads, *x, || g.zip_map(out, |d, y| d * y)),
            Op::Abs(x) => self.acc(grads, *x, || g.zip_map(self.value(*x), |d, v| d * sign(v))),
            Op::Relu(x) => {
                self.acc(grads, *x, || g.zip_map(self.value(*x), |d, v| if v > 0.0 { d } else { 0.0 }))
            }
            Op::LeakyRelu(x, s) => self.acc(grads, *x, || {
                g.zip_map(self.value(*x), |d, v| if v > 0.0 { d } else { s * d })
            }),
            Op::Silu(x) => self.acc(grads, *x, || {
                g.zip_map(self.value(*x), |d, v| {
                    let sg = 1.0 / (1.0 + (-v).exp());
                    d * sg * (1.0 + v * (1.0 - sg))
                })
            }),
            Op::Clamp(x, lo, hi) => self.acc(grads, *x, || {
                g.zip_map(self.value(*x), |d, v| if v >= *lo && v <= *hi { d } else { 0.0 })
            }),
            Op::Mean(x) => {
                let n = self.value(*x).numel() as f64;
                let d = g.item() / n;
                self.acc(grads, *x, || Tensor::full(self.shape(*x), d));
            }
            Op::Sum(x) => self.acc(grads, *x, || Tensor::full(self.shape(*x), g.item())),
            Op::Conv2d { x, w, b, geom } => self.conv_backward(grads, g, *x, *w, *b, geom),
            Op::GroupNorm { x, gamma, beta, groups, stats } => {
                self.group_norm_backward(grads, g, *x, *gamma, *beta, *groups, stats)
            }
            Op::AddChannelBias(x, b) => {
                self.acc(grads, *x, || g.clone());
                if self.rg(*b) {
                    let (n, c, h, w) = g.dims4().unwrap();
                    let bshape = self.shape(*b).to_vec();
                    let bn = bshape[0];
                    let mut db = Tensor::zeros(&bshape);
                    for (idx, chunk) in g.data().chunks(h * w).enumerate() {
                        let (bi, ci) = (idx / c, idx % c);
                        let k = if bn == 1 { ci } else { bi * c + ci };
                        db.data_mut()[k] += chunk.iter().sum::<f64>();
                    }
                    let _ = n;
                    self.acc(grads, *b, || db);
                }
            }
            Op::PixelShuffle(x, u) => self.acc(grads, *x, || pixel_unshuffle(g, *u)),
            Op::PixelUnshuffle(x, u) => self.acc(grads, *x, || pixel_shuffle(g, *u)),
            Op::ConcatChannels(xs) => {
                let (n, _, h, w) = g.dims4().unwrap();
                let ctot = g.shape()[1];
                let mut off = 0;
                for &x in xs {
                    let c = self.shape(x)[1];
                    if self.rg(x) {
                        let mut d = Vec::with_capacity(n * c * h * w);
                        for b in 0..n {
                            let s = (b * ctot + off) * h * w;
                            d.extend_from_slice(&g.data()[s..s + c * h * w]);
                        }
                        let shape = [n, c, h, w];
                        self.acc(grads, x, || Tensor::from_vec(&shape, d).unwrap());
                    }
                    off += c;
                }
            }
            Op::SliceChannels(x, start) => self.acc(grads, *x, || {
                let (n, c, h, w) = self.value(*x).dims4().unwrap();
                let len = g.shape()[1];
                let mut d = Tensor::zeros(&[n, c, h, w]);
                for b in 0..n {
                    let dst = (b * c + start) * h * w;
                    let src = b * len * h * w;
                    d.data_mut()[dst..dst + len * h * w]
                        .copy_from_slice(&g.data()[src..src + len * h * w]);
                }
                d
            }),
            Op::ConcatBatch(xs) => {
                let mut off = 0;
                for &x in xs {
                    let n = self.value(x).numel();
                    if self.rg(x) {
                        let shape = self.shape(x).to_vec();
                        let d = g.data()[off..off + n].to_vec();
                        self.acc(grads, x, || Tensor::from_vec(&shape, d).unwrap());
                    }
                    off += n;
                }
            }
            Op::Spatial(x, maps) => self.acc(grads, *x, || {
                let (n, c, h, w) = self.value(*x).dims4().unwrap();
                let (oh, ow) = maps[0].out_dims();
                let mut d = Tensor::zeros(&[n, c, h, w]);
                for b in 0..n {
                    let m = &maps[if maps.len() == 1 { 0 } else { b }];
                    for p in 0..c {
                        let plane = b * c + p;
                        m.apply_plane_transpose(
                            &g.data()[plane * oh * ow..(plane + 1) * oh * ow],
                            &mut d.data_mut()[plane * h * w..(plane + 1) * h * w],
                        );
                    }
                }
                d
            }),
            Op::MatMul(a, b) => self.matmul_backward(grads, g, *a, *b),
            Op::Transpose(x) => self.acc(grads, *x, || transpose3(g)),
            Op::Softmax(x) => self.acc(grads, *x, || {
                let last = *out.shape().last().unwrap();
                let mut d = g.clone();
                for (drow, yrow) in d.data_mut().chunks_mut(last).zip(out.data().chunks(last)) {
                    let dot: f64 = drow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for (dv, &y) in drow.iter_mut().zip(yrow) {
                        *dv = y * (*dv - dot);
                    }
                }
                d
            }),
            Op::Reshape(x) => self.acc(grads, *x, || g.reshape(self.shape(*x)).unwrap()),
        }
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce() -> Tensor) {
        if !self.rg(v) {
            return;
        }
        let d = f();
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&d),
            slot @ None => *slot = Some(d),
        }
    }

    fn conv_backward(
        &self,
        grads: &mut [Option<Tensor>],
        g: &Tensor,
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: &ConvGeom,
    ) {
        let n = self.shape(x)[0];
        let cout = self.shape(w)[0];
        let mut dx = self.rg(x).then(|| Tensor::zeros(self.shape(x)));
        let mut dw = self.rg(w).then(|| Tensor::zeros(self.shape(w)));
        let mut db = b.filter(|&b| self.rg(b)).map(|b| Tensor::zeros(self.shape(b)));
        conv2d_backward(
            geom,
            n,
            cout,
            self.value(x).data(),
            self.value(w).data(),
            g.data(),
            dx.as_mut().map(|t| t.data_mut()),
            dw.as_mut().map(|t| t.data_mut()),
            db.as_mut().map(|t| t.data_mut()),
        );
        if let Some(dx) = dx {
            self.acc(grads, x, || dx);
        }
        if let Some(dw) = dw {
            self.acc(grads, w, || dw);
        }
        if let (Some(db), Some(b)) = (db, b) {
            self.acc(grads, b, || db);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn group_norm_backward(
        &self,
        grads: &mut [Option<Tensor>],
        g: &Tensor,
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        stats: &[(f64, f64)],
    ) {
        let (n, c, h, w) = self.value(x).dims4().unwrap();
        let cg = c / groups;
        let hw = h * w;
        let m = (cg * hw) as f64;
        let xv = self.value(x).data();
        let gv = self.value(gamma).data();
        let dy = g.data();
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        let mut dx = vec![0.0; xv.len()];
        for b in 0..n {
            for gi in 0..groups {
                let (mean, rstd) = stats[b * groups + gi];
                let start = (b * c + gi * cg) * hw;
                let mut sum_dxhat = 0.0;
                let mut sum_dxhat_xhat = 0.0;
                for ci in 0..cg {
                    let ch = gi * cg + ci;
                    for i in start + ci * hw..start + (ci + 1) * hw {
                        let xhat = (xv[i] - mean) * rstd;
                        dgamma[ch] += dy[i] * xhat;
                        dbeta[ch] += dy[i];
                        let dxhat = dy[i] * gv[ch];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                    }
                }
                for ci in 0..cg {
                    let ch = gi * cg + ci;
                    for i in start + ci * hw..start + (ci + 1) * hw {
                        let xhat = (xv[i] - mean) * rstd;
                        let dxhat = dy[i] * gv[ch];
                        dx[i] = rstd / m * (m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat);
                    }
                }
            }
        }
        let shape = self.shape(x).to_vec();
        self.acc(grads, x, || Tensor::from_vec(&shape, dx).unwrap());
        self.acc(grads, gamma, || Tensor::from_vec(&[c], dgamma).unwrap());
        self.acc(grads, beta, || Tensor::from_vec(&[c], dbeta).unwrap());
    }

    fn matmul_backward(&self, grads: &mut [Option<Tensor>], g: &Tensor, a: Var, b: Var) {
        let (ba, m, k) = dims3(self.value(a));
        let (bb, _, n) = dims3(self.value(b));
        let bo = ba.max(bb);
        if self.rg(a) {
            // dA = dC · Bᵀ
            let mut da = Tensor::zeros(self.shape(a));
            let bv = self.value(b).data();
            for i in 0..bo {
                let gi = &g.data()[i * m * n..(i + 1) * m * n];
                let bi = &bv[(if bb == 1 { 0 } else { i }) * k * n..][..k * n];
                let dst = &mut da.data_mut()[(if ba == 1 { 0 } else { i }) * m * k..][..m * k];
                gemm(m, n, k, gi, (n as isize, 1), bi, (1, n as isize), 1.0, dst);
            }
            self.acc(grads, a, || da);
        }
        if self.rg(b) {
            // dB = Aᵀ · dC
            let mut db = Tensor::zeros(self.shape(b));
            let av = self.value(a).data();
            for i in 0..bo {
                let gi = &g.data()[i * m * n..(i + 1) * m * n];
                let ai = &av[(if ba == 1 { 0 } else { i }) * m * k..][..m * k];
                let dst = &mut db.data_mut()[(if bb == 1 { 0 } else { i }) * k * n..][..k * n];
                gemm(k, m, n, ai, (1, k as isize), gi, (n as isize, 1), 1.0, dst);
            }
            self.acc(grads, b, || db);
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn dims3(t: &Tensor) -> (usize, usize, usize) {
    match t.shape()[..] {
        [b, m, n] => (b, m, n),
        _ => panic!("expected rank-3 tensor, got shape {:?}", t.shape()),
    }
}

fn transpose3(t: &Tensor) -> Tensor {
    let (b, m, n) = dims3(t);
    let src = t.data();
    let mut out = vec![0.0; src.len()];
    for i in 0..b {
        for r in 0..m {
            for c in 0..n {
                out[i * m * n + c * m + r] = src[i * m * n + r * n + c];
            }
        }
    }
    Tensor::from_vec(&[b, n, m], out).unwrap()
}

/// Space-to-depth: `[N, C, H, W] → [N, C·u², H/u, W/u]`.
///
/// Output channel `c·u² + dy·u + dx` holds input pixel `(y·u + dy, x·u + dx)`
/// of channel `c`, i.e. each `u×u` block is laid out row-major.
pub fn pixel_unshuffle(t: &Tensor, u: usize) -> Tensor {
    let (n, c, h, w) = t.dims4().expect("pixel_unshuffle rank");
    assert!(h % u == 0 && w % u == 0, "pixel_unshuffle: {h}x{w} not divisible by {u}");
    let (oh, ow) = (h / u, w / u);
    let src = t.data();
    let mut out = vec![0.0; src.len()];
    for b in 0..n {
        for ci in 0..c {
            for dy in 0..u {
                for dx in 0..u {
                    let oc = ci * u * u + dy * u + dx;
                    let obase = (b * c * u * u + oc) * oh * ow;
                    for y in 0..oh {
                        let irow = ((b * c + ci) * h + y * u + dy) * w;
                        for x in 0..ow {
                            out[obase + y * ow + x] = src[irow + x * u + dx];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[n, c * u * u, oh, ow], out).unwrap()
}

/// Depth-to-space, the exact inverse of [`pixel_unshuffle`].
pub fn pixel_shuffle(t: &Tensor, u: usize) -> Tensor {
    let (n, cu, h, w) = t.dims4().expect("pixel_shuffle rank");
    assert!(cu % (u * u) == 0, "pixel_shuffle: {cu} channels not divisible by {}", u * u);
    let c = cu / (u * u);
    let (oh, ow) = (h * u, w * u);
    let src = t.data();
    let mut out = vec![0.0; src.len()];
    for b in 0..n {
        for ci in 0..c {
            for dy in 0..u {
                for dx in 0..u {
                    let ic = ci * u * u + dy * u + dx;
                    let ibase = (b * cu + ic) * h * w;
                    for y in 0..h {
                        let orow = ((b * c + ci) * oh + y * u + dy) * ow;
                        for x in 0..w {
                            out[orow + x * u + dx] = src[ibase + y * w + x];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[n, c, oh, ow], out).unwrap()
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients of every bound trainable parameter of `store`.
    pub fn params(&self, graph: &Graph, store: &ParamStore) -> Vec<(ParamId, Tensor)> {
        let mut out: Vec<(ParamId, Tensor)> = graph
            .bound
            .iter()
            .filter(|((tag, _), _)| *tag == store.tag())
            .filter_map(|((_, id), v)| self.wrt(*v).map(|g| (*id, g.clone())))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }
}
