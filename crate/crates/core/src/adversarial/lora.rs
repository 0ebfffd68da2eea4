use rand::Rng;
use serde::{Deserialize, Serialize};
use vsr_tensor::{Graph, ParamId, ParamStore, Tensor, Var};

use crate::error::{Result, VsrError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoraConfig {
    pub rank: usize,
    pub scale: f64,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self { rank: 4, scale: 1.0 }
    }
}

/// Low-rank update `scale · B·A` with `A: [r, fan_in]` and `B: [fan_out, r]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Adapter {
    pub a: ParamId,
    pub b: ParamId,
    pub rank: usize,
    pub scale: f64,
}

/// A convolution with bias whose weight can be frozen and adapted.
#[derive(Debug, Clone)]
pub struct AdaptedConv {
    pub name: String,
    pub weight: ParamId,
    pub bias: ParamId,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub adapter: Option<Adapter>,
}

impl AdaptedConv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let weight = store.insert_normal(format!("{name}.weight"), &[cout, cin, kernel, kernel], cin * kernel * kernel, gain, rng);
        let bias = store.insert(format!("{name}.bias"), Tensor::zeros(&[cout]), true);
        Self {
            name: name.to_string(),
            weight,
            bias,
            cin,
            cout,
            kernel,
            stride,
            adapter: None,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.cin * self.kernel * self.kernel
    }

    pub fn fan_out(&self) -> usize {
        self.cout
    }

    /// `W + scale·reshape(B·A)`, or just `W` without an adapter.
    pub fn effective_weight(&self, g: &mut Graph, store: &ParamStore) -> Var {
        let w = g.param(store, self.weight);
        match &self.adapter {
            None => w,
            Some(ad) => {
                let a = g.param(store, ad.a);
                let b = g.param(store, ad.b);
                let a = g.reshape(a, &[1, ad.rank, self.fan_in()]);
                let b = g.reshape(b, &[1, self.cout, ad.rank]);
                let ba = g.matmul(b, a);
                let ba = g.reshape(ba, &[self.cout, self.cin, self.kernel, self.kernel]);
                let ba = g.scale(ba, ad.scale);
                g.add(w, ba)
            }
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = self.effective_weight(g, store);
        let b = g.param(store, self.bias);
        g.conv2d(x, w, Some(b), self.stride, self.kernel / 2)
    }
}

/// Freezes `conv` and attaches a rank-`r` adapter with `B = 0` and a random
/// `A`. Returns the number of new trainable parameters, `r·(fan_in + fan_out)`.
pub fn apply_lora<R: Rng>(conv: &mut AdaptedConv, store: &mut ParamStore, cfg: LoraConfig, rng: &mut R) -> Result<usize> {
    if conv.adapter.is_some() {
        return Err(VsrError::Contract(format!("{} already carries an adapter", conv.name)));
    }
    let limit = conv.fan_in().min(conv.fan_out());
    if cfg.rank == 0 || cfg.rank >= limit {
        return Err(VsrError::Config(format!(
            "adapter rank {} on {} must satisfy 1 <= r < {limit}",
            cfg.rank, conv.name
        )));
    }
    if !cfg.scale.is_finite() {
        return Err(VsrError::Config("adapter scale must be finite".into()));
    }
    store.set_trainable(conv.weight, false);
    store.set_trainable(conv.bias, false);
    let a = store.insert_normal(format!("{}.lora_a", conv.name), &[cfg.rank, conv.fan_in()], conv.fan_in(), 0.5, rng);
    let b = store.insert(format!("{}.lora_b", conv.name), Tensor::zeros(&[conv.fan_out(), cfg.rank]), true);
    conv.adapter = Some(Adapter {
        a,
        b,
        rank: cfg.rank,
        scale: cfg.scale,
    });
    Ok(cfg.rank * (conv.fan_in() + conv.fan_out()))
}

/// Attaches adapters to every layer, capping the rank at `min(fan_in, fan_out) − 1`
/// for layers too narrow for the requested rank.
pub(crate) fn adapt_all<R: Rng>(
    convs: &mut [&mut AdaptedConv],
    store: &mut ParamStore,
    cfg: LoraConfig,
    rng: &mut R,
) -> Result<usize> {
    let mut added = 0;
    for conv in convs.iter_mut() {
        let cap = conv.fan_in().min(conv.fan_out()).saturating_sub(1);
        let rank = cfg.rank.min(cap);
        if rank == 0 {
            continue;
        }
        added += apply_lora(conv, store, LoraConfig { rank, ..cfg }, rng)?;
    }
    Ok(added)
}

/// Sets adapter trainability, e.g. to freeze them for an ablation.
pub(crate) fn set_adapters_trainable(convs: &[&AdaptedConv], store: &mut ParamStore, trainable: bool) {
    for c in convs {
        if let Some(ad) = &c.adapter {
            store.set_trainable(ad.a, trainable);
            store.set_trainable(ad.b, trainable);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (ParamStore, AdaptedConv, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let conv = AdaptedConv::new(&mut store, "c", 3, 8, 3, 1, 1.0, &mut rng);
        (store, conv, rng)
    }

    fn run(conv: &AdaptedConv, store: &ParamStore, x: &Tensor) -> Tensor {
        let mut g = Graph::inference();
        let xv = g.constant(x.clone());
        let y = conv.forward(&mut g, store, xv);
        g.value(y).clone()
    }

    #[test]
    fn fresh_adapter_is_bit_exact_and_counts_params() {
        let (mut store, mut conv, mut rng) = setup();
        let x = Tensor::from_fn(&[1, 3, 5, 5], |i| (i as f64 * 0.13).sin());
        let before = run(&conv, &store, &x);
        let trainable = store.trainable_numel();
        let added = apply_lora(&mut conv, &mut store, LoraConfig::default(), &mut rng).unwrap();
        assert_eq!(added, 4 * (27 + 8));
        assert_eq!(store.trainable_numel(), added);
        assert!(trainable > 0);
        let after = run(&conv, &store, &x);
        assert_eq!(before.data(), after.data());
    }

    #[test]
    fn rank_limits() {
        let (mut store, mut conv, mut rng) = setup();
        let bad = LoraConfig { rank: 8, scale: 1.0 };
        assert!(matches!(apply_lora(&mut conv, &mut store, bad, &mut rng), Err(VsrError::Config(_))));
        let zero = LoraConfig { rank: 0, scale: 1.0 };
        assert!(matches!(apply_lora(&mut conv, &mut store, zero, &mut rng), Err(VsrError::Config(_))));
    }

    #[test]
    fn one_step_changes_output_but_not_frozen_weight() {
        let (mut store, mut conv, mut rng) = setup();
        apply_lora(&mut conv, &mut store, LoraConfig::default(), &mut rng).unwrap();
        let x = Tensor::from_fn(&[1, 3, 5, 5], |i| (i as f64 * 0.31).cos());
        let before = run(&conv, &store, &x);
        let frozen = store.value(conv.weight).clone();
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = conv.forward(&mut g, &store, xv);
        let loss = g.mean(y);
        let grads = g.backward(loss).params(&g, &store);
        let mut opt = vsr_tensor::Adam::new(&store);
        opt.step(&mut store, &grads, 1e-2).unwrap();
        assert_eq!(store.value(conv.weight), &frozen);
        assert_ne!(run(&conv, &store, &x).data(), before.data());
    }
}
