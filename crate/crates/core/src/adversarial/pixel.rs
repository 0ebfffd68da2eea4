use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vsr_tensor::{Graph, ParamStore, Var};

use super::lora::AdaptedConv;
use crate::error::{Result, VsrError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PixelDiscConfig {
    pub stem_channels: [usize; 3],
    pub head_channels: usize,
    pub learning_rate: f64,
}

impl Default for PixelDiscConfig {
    fn default() -> Self {
        Self {
            stem_channels: [16, 32, 32],
            head_channels: 32,
            learning_rate: 2e-4,
        }
    }
}

/// Patch classifier over a frozen, randomly initialised feature stem.
///
/// The stem is three 3×3 convolutions (two with stride 2) with leaky ReLU;
/// the trainable head maps features to one real-vs-fake score per patch.
#[derive(Debug, Clone)]
pub struct PixelDiscriminator {
    pub config: PixelDiscConfig,
    store: ParamStore,
    stem: Vec<AdaptedConv>,
    head: Vec<AdaptedConv>,
}

const SLOPE: f64 = 0.2;

impl PixelDiscriminator {
    pub fn new(cfg: &PixelDiscConfig, seed: u64) -> Result<Self> {
        if cfg.stem_channels.contains(&0) || cfg.head_channels == 0 {
            return Err(VsrError::Config("pixel discriminator widths must be positive".into()));
        }
        if !(cfg.learning_rate > 0.0) {
            return Err(VsrError::Config("pixel discriminator learning rate must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let [c0, c1, c2] = cfg.stem_channels;
        let stem = vec![
            AdaptedConv::new(&mut store, "stem.0", 3, c0, 3, 2, 1.0, &mut rng),
            AdaptedConv::new(&mut store, "stem.1", c0, c1, 3, 2, 1.0, &mut rng),
            AdaptedConv::new(&mut store, "stem.2", c1, c2, 3, 1, 1.0, &mut rng),
        ];
        for conv in &stem {
            store.set_trainable(conv.weight, false);
            store.set_trainable(conv.bias, false);
        }
        let head = vec![
            AdaptedConv::new(&mut store, "head.0", c2, cfg.head_channels, 3, 1, 1.0, &mut rng),
            AdaptedConv::new(&mut store, "head.1", cfg.head_channels, 1, 1, 1, 0.5, &mut rng),
        ];
        Ok(Self {
            config: cfg.clone(),
            store,
            stem,
            head,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Per-patch scores `[N, 1, H/4, W/4]` for frames `[N, 3, H, W]` in [0, 1].
    pub fn scores_g(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (_, c, _, _) = g.value(x).dims4()?;
        if c != 3 {
            return Err(VsrError::Dimension(format!("pixel discriminator expects RGB, got {c} channels")));
        }
        let mut h = g.scale(x, 2.0);
        h = g.add_scalar(h, -1.0);
        for conv in &self.stem {
            h = conv.forward(g, &self.store, h);
            h = g.leaky_relu(h, SLOPE);
        }
        h = self.head[0].forward(g, &self.store, h);
        h = g.leaky_relu(h, SLOPE);
        Ok(self.head[1].forward(g, &self.store, h))
    }
}

/// `mean(max(0, 1 − real)) + mean(max(0, 1 + fake))` on score maps.
pub fn hinge_loss_g(g: &mut Graph, real_scores: Var, fake_scores: Var) -> Var {
    let r = g.scale(real_scores, -1.0);
    let r = g.add_scalar(r, 1.0);
    let r = g.relu(r);
    let r = g.mean(r);
    let f = g.add_scalar(fake_scores, 1.0);
    let f = g.relu(f);
    let f = g.mean(f);
    g.add(r, f)
}

/// Discriminator hinge loss; `fake` is detached so no gradient reaches the
/// generator.
pub fn pixel_disc_loss_g(g: &mut Graph, disc: &PixelDiscriminator, real: Var, fake: Var) -> Result<Var> {
    let fake = g.detach(fake);
    let rs = disc.scores_g(g, real)?;
    let fs = disc.scores_g(g, fake)?;
    Ok(hinge_loss_g(g, rs, fs))
}

/// `−mean(scores)`.
pub fn gen_loss_from_scores_g(g: &mut Graph, scores: Var) -> Var {
    let m = g.mean(scores);
    g.scale(m, -1.0)
}

/// Generator counterpart `−mean(D(fake))`; gradients flow into `fake`.
pub fn pixel_gen_loss_g(g: &mut Graph, disc: &PixelDiscriminator, fake: Var) -> Result<Var> {
    let s = disc.scores_g(g, fake)?;
    Ok(gen_loss_from_scores_g(g, s))
}
