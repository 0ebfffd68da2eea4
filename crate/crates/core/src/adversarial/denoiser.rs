use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use vsr_tensor::{Adam, Graph, ParamStore, Tensor, Var};

use super::lora::{adapt_all, set_adapters_trainable, AdaptedConv, LoraConfig};
use crate::error::{Result, VsrError};

/// An `x₀`-predicting denoiser `D(x, σ)` with one noise level per batch item.
pub trait Denoiser {
    fn denoise_g(&self, g: &mut Graph, x: Var, sigma: &[f64]) -> Result<Var>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    pub channels: usize,
    pub blocks: usize,
    pub sigma_data: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            blocks: 2,
            sigma_data: 1.0,
            sigma_min: 0.02,
            sigma_max: 1.0,
            learning_rate: 1e-3,
            batch_size: 8,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(VsrError::Config("denoiser width must be positive".into()));
        }
        if !(self.sigma_min > 0.0 && self.sigma_max > self.sigma_min) {
            return Err(VsrError::Config(format!(
                "noise range must satisfy 0 < sigma_min < sigma_max, got [{}, {}]",
                self.sigma_min, self.sigma_max
            )));
        }
        if !(self.sigma_data > 0.0 && self.learning_rate > 0.0) || self.batch_size == 0 {
            return Err(VsrError::Config("denoiser sigma_data, learning rate and batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Log-uniform draw from `[lo, hi]`.
pub fn sample_sigma<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

pub fn normal_tensor<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor {
    Tensor::from_fn(shape, |_| StandardNormal.sample(rng))
}

/// Residual conv net on `[noisy latent ‖ log σ]`, preconditioned so that
/// `D(x, σ) = c_skip·x + c_out·F(c_in·x, log σ)`.
#[derive(Debug, Clone)]
pub struct LatentDenoiser {
    pub config: DenoiserConfig,
    pub latent_channels: usize,
    store: ParamStore,
    conv_in: AdaptedConv,
    blocks: Vec<(AdaptedConv, AdaptedConv)>,
    conv_out: AdaptedConv,
}

fn per_item(values: &[f64], shape: &[usize]) -> Tensor {
    let per = shape[1..].iter().product::<usize>();
    Tensor::from_fn(shape, |i| values[i / per])
}

impl LatentDenoiser {
    pub fn new(cfg: &DenoiserConfig, latent_channels: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = cfg.channels;
        let conv_in = AdaptedConv::new(&mut store, "den.in", latent_channels + 1, c, 3, 1, 1.0, &mut rng);
        let blocks = (0..cfg.blocks)
            .map(|i| {
                (
                    AdaptedConv::new(&mut store, &format!("den.block{i}.0"), c, c, 3, 1, 1.0, &mut rng),
                    AdaptedConv::new(&mut store, &format!("den.block{i}.1"), c, c, 3, 1, 0.3, &mut rng),
                )
            })
            .collect();
        let conv_out = AdaptedConv::new(&mut store, "den.out", c, latent_channels, 3, 1, 0.3, &mut rng);
        Ok(Self {
            config: cfg.clone(),
            latent_channels,
            store,
            conv_in,
            blocks,
            conv_out,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn convs(&self) -> Vec<&AdaptedConv> {
        let mut v = vec![&self.conv_in];
        for (a, b) in &self.blocks {
            v.push(a);
            v.push(b);
        }
        v.push(&self.conv_out);
        v
    }

    pub(crate) fn attach_adapters<R: Rng>(&mut self, cfg: LoraConfig, rng: &mut R) -> Result<usize> {
        let mut convs: Vec<&mut AdaptedConv> = vec![&mut self.conv_in];
        for (a, b) in &mut self.blocks {
            convs.push(a);
            convs.push(b);
        }
        convs.push(&mut self.conv_out);
        adapt_all(&mut convs, &mut self.store, cfg, rng)
    }

    pub(crate) fn set_adapters_trainable(&mut self, trainable: bool) {
        let convs = self.convs();
        let convs: Vec<AdaptedConv> = convs.into_iter().cloned().collect();
        let refs: Vec<&AdaptedConv> = convs.iter().collect();
        set_adapters_trainable(&refs, &mut self.store, trainable);
    }

    pub fn has_adapters(&self) -> bool {
        self.convs().iter().any(|c| c.adapter.is_some())
    }

    /// Denoising score matching on clean latents `z`, weighted so every noise
    /// level contributes at unit scale. Returns the batch loss node.
    pub fn dsm_loss_g<R: Rng>(&self, g: &mut Graph, z: Var, rng: &mut R) -> Result<Var> {
        let shape = g.shape(z).to_vec();
        let sigma: Vec<f64> = (0..shape[0])
            .map(|_| sample_sigma(rng, self.config.sigma_min, self.config.sigma_max))
            .collect();
        let noise = g.constant(normal_tensor(&shape, rng));
        let sig = g.constant(per_item(&sigma, &shape));
        let sn = g.mul(noise, sig);
        let x = g.add(z, sn);
        let d = self.denoise_g(g, x, &sigma)?;
        let err = g.sub(d, z);
        let sd2 = self.config.sigma_data.powi(2);
        let w: Vec<f64> = sigma.iter().map(|s| (s * s + sd2) / (s * s * sd2)).collect();
        let wt = g.constant(per_item(&w, &shape));
        let sq = g.square(err);
        let wsq = g.mul(sq, wt);
        Ok(g.mean(wsq))
    }
}

impl Denoiser for LatentDenoiser {
    fn denoise_g(&self, g: &mut Graph, x: Var, sigma: &[f64]) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let (n, c, h, w) = g.value(x).dims4()?;
        if c != self.latent_channels || sigma.len() != n {
            return Err(VsrError::Dimension(format!(
                "denoiser expects {} latent channels and one sigma per item, got {c} channels / {} sigmas for {n} items",
                self.latent_channels,
                sigma.len()
            )));
        }
        if sigma.iter().any(|s| !(*s > 0.0)) {
            return Err(VsrError::Config("noise level must be positive".into()));
        }
        let sd = self.config.sigma_data;
        let c_in: Vec<f64> = sigma.iter().map(|s| 1.0 / (s * s + sd * sd).sqrt()).collect();
        let c_skip: Vec<f64> = sigma.iter().map(|s| sd * sd / (s * s + sd * sd)).collect();
        let c_out: Vec<f64> = sigma.iter().map(|s| s * sd / (s * s + sd * sd).sqrt()).collect();
        let ci = g.constant(per_item(&c_in, &shape));
        let xin = g.mul(x, ci);
        let log_map = g.constant(Tensor::from_fn(&[n, 1, h, w], |i| sigma[i / (h * w)].ln() / 4.0));
        let inp = g.concat_channels(&[xin, log_map]);
        let mut hcur = self.conv_in.forward(g, &self.store, inp);
        for (a, b) in &self.blocks {
            let t = g.silu(hcur);
            let t = a.forward(g, &self.store, t);
            let t = g.silu(t);
            let t = b.forward(g, &self.store, t);
            hcur = g.add(hcur, t);
        }
        let t = g.silu(hcur);
        let f = self.conv_out.forward(g, &self.store, t);
        let co = g.constant(per_item(&c_out, &shape));
        let cs = g.constant(per_item(&c_skip, &shape));
        let skip = g.mul(x, cs);
        let res = g.mul(f, co);
        Ok(g.add(skip, res))
    }
}

/// Pretrains the denoiser on clean latents `[N, L, h, w]` with Adam.
pub fn pretrain_denoiser(latents: &[Tensor], steps: usize, cfg: &DenoiserConfig, seed: u64) -> Result<LatentDenoiser> {
    let first = latents
        .first()
        .ok_or_else(|| VsrError::Contract("denoiser pretraining needs at least one latent".into()))?;
    let (_, l, _, _) = first.dims4()?;
    let mut den = LatentDenoiser::new(cfg, l, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xde);
    let mut opt = Adam::new(&den.store);
    for step in 0..steps {
        let picks: Vec<Tensor> = (0..cfg.batch_size)
            .map(|_| latents[rng.random_range(0..latents.len())].clone())
            .collect();
        let batch = Tensor::stack_batch(&picks)?;
        let mut g = Graph::new();
        let z = g.constant(batch);
        let loss = den.dsm_loss_g(&mut g, z, &mut rng)?;
        if !g.value(loss).item().is_finite() {
            return Err(VsrError::NonFinite {
                term: "denoiser_score_matching".into(),
                step: step as u64,
            });
        }
        let grads = g.backward(loss).params(&g, &den.store);
        opt.step(&mut den.store, &grads, cfg.learning_rate)?;
    }
    Ok(den)
}

/// `(D(z + σ·noise, σ) − z) / σ²` with one σ per batch item.
pub fn latent_score_g(g: &mut Graph, den: &dyn Denoiser, z: Var, sigma: &[f64], noise: Var) -> Result<Var> {
    if g.shape(z) != g.shape(noise) {
        return Err(VsrError::Dimension(format!(
            "noise shape {:?} differs from latent shape {:?}",
            g.shape(noise),
            g.shape(z)
        )));
    }
    if sigma.iter().any(|s| !(*s > 0.0)) {
        return Err(VsrError::Config(format!("sigma must be positive, got {sigma:?}")));
    }
    let shape = g.shape(z).to_vec();
    if sigma.len() != shape[0] {
        return Err(VsrError::Dimension(format!("{} sigmas for a batch of {}", sigma.len(), shape[0])));
    }
    let sig = g.constant(per_item(sigma, &shape));
    let sn = g.mul(noise, sig);
    let x = g.add(z, sn);
    let d = den.denoise_g(g, x, sigma)?;
    let diff = g.sub(d, z);
    let inv: Vec<f64> = sigma.iter().map(|s| 1.0 / (s * s)).collect();
    let inv = g.constant(per_item(&inv, &shape));
    Ok(g.mul(diff, inv))
}

/// Tensor form of [`latent_score_g`] with a single σ for the whole batch.
pub fn latent_score(den: &dyn Denoiser, z: &Tensor, sigma: f64, noise: &Tensor) -> Result<Tensor> {
    if !(sigma > 0.0) {
        return Err(VsrError::Config(format!("sigma must be positive, got {sigma}")));
    }
    let mut g = Graph::inference();
    let zv = g.constant(z.clone());
    let nv = g.constant(noise.clone());
    let n = z.shape().first().copied().unwrap_or(1);
    let s = latent_score_g(&mut g, den, zv, &vec![sigma; n], nv)?;
    Ok(g.value(s).clone())
}

/// `mean ‖s(z_gen, σ) − s(z_real, σ)‖²` with shared σ and noise. `z_real` is
/// detached, so gradients reach `z_gen` only.
pub fn latent_adv_loss_g(
    g: &mut Graph,
    den: &dyn Denoiser,
    z_gen: Var,
    z_real: Var,
    sigma: &[f64],
    noise: Var,
) -> Result<Var> {
    if g.shape(z_gen) != g.shape(z_real) {
        return Err(VsrError::Dimension(format!(
            "generated latent {:?} vs real latent {:?}",
            g.shape(z_gen),
            g.shape(z_real)
        )));
    }
    let zr = g.detach(z_real);
    let sg = latent_score_g(g, den, z_gen, sigma, noise)?;
    let sr = latent_score_g(g, den, zr, sigma, noise)?;
    let sr = g.detach(sr);
    let d = g.sub(sg, sr);
    let sq = g.square(d);
    Ok(g.mean(sq))
}

pub fn latent_adv_loss(den: &dyn Denoiser, z_gen: &Tensor, z_real: &Tensor, sigma: f64, noise: &Tensor) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(VsrError::Config(format!("sigma must be positive, got {sigma}")));
    }
    let mut g = Graph::inference();
    let a = g.constant(z_gen.clone());
    let b = g.constant(z_real.clone());
    let nv = g.constant(noise.clone());
    let n = z_gen.shape().first().copied().unwrap_or(1);
    let l = latent_adv_loss_g(&mut g, den, a, b, &vec![sigma; n], nv)?;
    Ok(g.value(l).item())
}
