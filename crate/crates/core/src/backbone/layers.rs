use rand::Rng;
use vsr_tensor::{Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Debug, Clone)]
pub(crate) struct Conv {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        bias: bool,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let w = store.insert_normal(format!("{name}.weight"), &[cout, cin, k, k], cin * k * k, gain, rng);
        let b = bias.then(|| store.insert(format!("{name}.bias"), Tensor::zeros(&[cout]), true));
        Self { w, b, stride, pad: k / 2 }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.w);
        let b = self.b.map(|b| g.param(store, b));
        g.conv2d(x, w, b, self.stride, self.pad)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
}

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, c: usize, groups: usize) -> Self {
        Self {
            gamma: store.insert(format!("{name}.gamma"), Tensor::full(&[c], 1.0), true),
            beta: store.insert(format!("{name}.beta"), Tensor::zeros(&[c]), true),
            groups,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.group_norm(x, gamma, beta, self.groups, 1e-5)
    }
}

/// GN → SiLU → conv → (+time) → GN → SiLU → conv, plus a residual path.
#[derive(Debug, Clone)]
pub(crate) struct ResBlock {
    norm1: Norm,
    conv1: Conv,
    norm2: Norm,
    conv2: Conv,
    skip: Option<Conv>,
    time_proj: Option<Conv>,
}

impl ResBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        groups: usize,
        time_dim: Option<usize>,
        rng: &mut R,
    ) -> Self {
        Self {
            norm1: Norm::new(store, &format!("{name}.norm1"), cin, groups.min(cin)),
            conv1: Conv::new(store, &format!("{name}.conv1"), cin, cout, 3, 1, true, 1.0, rng),
            norm2: Norm::new(store, &format!("{name}.norm2"), cout, groups.min(cout)),
            conv2: Conv::new(store, &format!("{name}.conv2"), cout, cout, 3, 1, true, 0.5, rng),
            skip: (cin != cout).then(|| Conv::new(store, &format!("{name}.skip"), cin, cout, 1, 1, true, 1.0, rng)),
            time_proj: time_dim.map(|d| Conv::new(store, &format!("{name}.time_proj"), d, cout, 1, 1, true, 1.0, rng)),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, temb: Option<Var>) -> Var {
        let h = self.norm1.forward(g, store, x);
        let h = g.silu(h);
        let mut h = self.conv1.forward(g, store, h);
        if let (Some(tp), Some(t)) = (&self.time_proj, temb) {
            let t = g.silu(t);
            let bias = tp.forward(g, store, t);
            h = g.add_channel_bias(h, bias);
        }
        let h = self.norm2.forward(g, store, h);
        let h = g.silu(h);
        let h = self.conv2.forward(g, store, h);
        let res = match &self.skip {
            Some(s) => s.forward(g, store, x),
            None => x,
        };
        g.add(h, res)
    }
}

/// Spatial transformer: self-attention, cross-attention on a learned null
/// context, and a gated feed-forward layer, wrapped by 1×1 projections.
#[derive(Debug, Clone)]
pub(crate) struct AttnBlock {
    norm: Norm,
    proj_in: Conv,
    norm_self: Norm,
    q: Conv,
    k: Conv,
    v: Conv,
    o: Conv,
    norm_cross: Norm,
    cq: Conv,
    ck: ParamId,
    cv: ParamId,
    co: Conv,
    context: ParamId,
    norm_ff: Norm,
    ff_in: Conv,
    ff_out: Conv,
    proj_out: Conv,
    channels: usize,
}

pub(crate) const CONTEXT_TOKENS: usize = 4;

impl AttnBlock {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, c: usize, groups: usize, ctx_dim: usize, rng: &mut R) -> Self {
        let lin = |store: &mut ParamStore, n: &str, cin: usize, cout: usize, bias: bool, rng: &mut R| {
            Conv::new(store, &format!("{name}.{n}"), cin, cout, 1, 1, bias, 1.0, rng)
        };
        let norm_in = Norm::new(store, &format!("{name}.norm"), c, groups.min(c));
        let proj_in = lin(store, "proj_in", c, c, true, rng);
        let norm_self = Norm::new(store, &format!("{name}.norm_self"), c, 1);
        let q = lin(store, "self_q", c, c, false, rng);
        let k = lin(store, "self_k", c, c, false, rng);
        let v = lin(store, "self_v", c, c, false, rng);
        let o = lin(store, "self_o", c, c, true, rng);
        let norm_cross = Norm::new(store, &format!("{name}.norm_cross"), c, 1);
        let cq = lin(store, "cross_q", c, c, false, rng);
        let ck = store.insert_normal(format!("{name}.cross_k.weight"), &[1, ctx_dim, c], ctx_dim, 1.0, rng);
        let cv = store.insert_normal(format!("{name}.cross_v.weight"), &[1, ctx_dim, c], ctx_dim, 1.0, rng);
        let co = lin(store, "cross_o", c, c, true, rng);
        let context = store.insert_normal(
            format!("{name}.null_context"),
            &[1, CONTEXT_TOKENS, ctx_dim],
            ctx_dim,
            0.5,
            rng,
        );
        let norm_ff = Norm::new(store, &format!("{name}.norm_ff"), c, 1);
        let ff_in = lin(store, "ff_in", c, 8 * c, true, rng);
        let ff_out = lin(store, "ff_out", 4 * c, c, true, rng);
        let proj_out = Conv::new(store, &format!("{name}.proj_out"), c, c, 1, 1, true, 0.5, rng);
        Self {
            norm: norm_in,
            proj_in,
            norm_self,
            q,
            k,
            v,
            o,
            norm_cross,
            cq,
            ck,
            cv,
            co,
            context,
            norm_ff,
            ff_in,
            ff_out,
            proj_out,
            channels: c,
        }
    }

    fn tokens(g: &mut Graph, x: Var) -> Var {
        let s = g.shape(x).to_vec();
        let t = g.reshape(x, &[s[0], s[1], s[2] * s[3]]);
        g.transpose(t)
    }

    fn untokens(g: &mut Graph, t: Var, like: &[usize]) -> Var {
        let t = g.transpose(t);
        g.reshape(t, like)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let shape = g.shape(x).to_vec();
        let scale = 1.0 / (self.channels as f64).sqrt();
        let h = self.norm.forward(g, store, x);
        let mut h = self.proj_in.forward(g, store, h);

        // self-attention
        let n = self.norm_self.forward(g, store, h);
        let q = self.q.forward(g, store, n);
        let k = self.k.forward(g, store, n);
        let v = self.v.forward(g, store, n);
        let qt = Self::tokens(g, q);
        let kt = Self::tokens(g, k);
        let kt = g.transpose(kt);
        let vt = Self::tokens(g, v);
        let scores = g.matmul(qt, kt);
        let scores = g.scale(scores, scale);
        let attn = g.softmax(scores);
        let out = g.matmul(attn, vt);
        let out = Self::untokens(g, out, &shape);
        let out = self.o.forward(g, store, out);
        h = g.add(h, out);

        // cross-attention on the learned context
        let n = self.norm_cross.forward(g, store, h);
        let q = self.cq.forward(g, store, n);
        let qt = Self::tokens(g, q);
        let ctx = g.param(store, self.context);
        let wk = g.param(store, self.ck);
        let wv = g.param(store, self.cv);
        let kc = g.matmul(ctx, wk);
        let kc = g.transpose(kc);
        let vc = g.matmul(ctx, wv);
        let scores = g.matmul(qt, kc);
        let scores = g.scale(scores, scale);
        let attn = g.softmax(scores);
        let out = g.matmul(attn, vc);
        let out = Self::untokens(g, out, &shape);
        let out = self.co.forward(g, store, out);
        h = g.add(h, out);

        // gated feed-forward
        let n = self.norm_ff.forward(g, store, h);
        let f = self.ff_in.forward(g, store, n);
        let a = g.slice_channels(f, 0, 4 * self.channels);
        let gate = g.slice_channels(f, 4 * self.channels, 4 * self.channels);
        let gate = g.silu(gate);
        let f = g.mul(a, gate);
        let f = self.ff_out.forward(g, store, f);
        h = g.add(h, f);

        let h = self.proj_out.forward(g, store, h);
        g.add(x, h)
    }
}

/// Sinusoidal embedding of a scalar timestep as a `[1, dim, 1, 1]` tensor.
pub(crate) fn timestep_embedding(t: f64, dim: usize) -> Tensor {
    let half = dim / 2;
    Tensor::from_fn(&[1, dim, 1, 1], |i| {
        let j = i % half.max(1);
        let freq = (-(10000f64.ln()) * j as f64 / half.max(1) as f64).exp();
        if i < half {
            (t * freq).cos()
        } else {
            (t * freq).sin()
        }
    })
}
