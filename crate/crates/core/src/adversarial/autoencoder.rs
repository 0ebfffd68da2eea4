use std::fs;
use std::path::Path;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vsr_tensor::{Adam, Graph, ParamStore, Tensor, Var};

use super::lora::{adapt_all, set_adapters_trainable, AdaptedConv, LoraConfig};
use crate::data::io::{read_json, write_json};
use crate::data::Frame;
use crate::error::{Result, VsrError};
use crate::resample;

/// Spatial reduction of the latent grid.
pub const LATENT_DOWNSAMPLE: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoencoderConfig {
    pub base_channels: usize,
    pub latent_channels: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub crop: usize,
    /// Reconstruction PSNR the pretraining aims for (dB).
    pub target_psnr_db: f64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            base_channels: 16,
            latent_channels: 4,
            learning_rate: 2e-3,
            batch_size: 4,
            crop: 32,
            target_psnr_db: 30.0,
        }
    }
}

impl AutoencoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.latent_channels == 0 {
            return Err(VsrError::Config("autoencoder widths must be positive".into()));
        }
        if self.crop == 0 || self.crop % LATENT_DOWNSAMPLE != 0 {
            return Err(VsrError::Config(format!("crop must be a positive multiple of {LATENT_DOWNSAMPLE}")));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return Err(VsrError::Config("autoencoder learning rate and batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderMetadata {
    pub steps: usize,
    pub seed: u64,
    pub untrained: bool,
    /// Held-out reconstruction PSNR after pretraining (dB).
    pub psnr_db: Option<f64>,
    pub target_psnr_db: f64,
    pub target_met: bool,
    /// Multiplier giving encoder latents unit standard deviation.
    pub latent_scale: f64,
    pub final_loss: Option<f64>,
}

/// Four-layer convolutional encoder (two stride-2 layers) with a mirrored
/// decoder. Only the encoder layers can carry adapters.
#[derive(Debug, Clone)]
pub struct LatentAutoencoder {
    pub config: AutoencoderConfig,
    pub metadata: AutoencoderMetadata,
    store: ParamStore,
    encoder: Vec<AdaptedConv>,
    decoder: Vec<AdaptedConv>,
}

impl LatentAutoencoder {
    pub fn new(cfg: &AutoencoderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (c, c2, l) = (cfg.base_channels, 2 * cfg.base_channels, cfg.latent_channels);
        let encoder = vec![
            AdaptedConv::new(&mut store, "enc.0", 3, c, 3, 1, 1.0, &mut rng),
            AdaptedConv::new(&mut store, "enc.1", c, c2, 3, 2, 1.0, &mut rng),
            AdaptedConv::new(&mut store, "enc.2", c2, c2, 3, 2, 1.0, &mut rng),
            AdaptedConv::new(&mut store, "enc.3", c2, l, 3, 1, 1.0, &mut rng),
        ];
        let decoder = vec![
            AdaptedConv::new(&mut store, "dec.0", l, c2, 3, 1, 1.0, &mut rng),
            AdaptedConv::new(&mut store, "dec.1", c2, c, 3, 1, 1.0, &mut rng),
            AdaptedConv::new(&mut store, "dec.2", c, c, 3, 1, 1.0, &mut rng),
            AdaptedConv::new(&mut store, "dec.3", c, 3, 3, 1, 0.5, &mut rng),
        ];
        Ok(Self {
            config: cfg.clone(),
            metadata: AutoencoderMetadata {
                steps: 0,
                seed,
                untrained: true,
                psnr_db: None,
                target_psnr_db: cfg.target_psnr_db,
                target_met: false,
                latent_scale: 1.0,
                final_loss: None,
            },
            store,
            encoder,
            decoder,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn downsample_factor(&self) -> usize {
        LATENT_DOWNSAMPLE
    }

    pub fn latent_channels(&self) -> usize {
        self.config.latent_channels
    }

    /// Unscaled latent of `x` (`[N, 3, H, W]` in [0, 1]).
    fn encode_raw(&self, g: &mut Graph, x: Var) -> Var {
        let mut h = g.scale(x, 2.0);
        h = g.add_scalar(h, -1.0);
        for (i, conv) in self.encoder.iter().enumerate() {
            h = conv.forward(g, &self.store, h);
            if i + 1 < self.encoder.len() {
                h = g.silu(h);
            }
        }
        h
    }

    /// Scaled latent `[N, L, H/4, W/4]`.
    pub fn encode_g(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (_, c, h, w) = g.value(x).dims4()?;
        if c != 3 || h % LATENT_DOWNSAMPLE != 0 || w % LATENT_DOWNSAMPLE != 0 {
            return Err(VsrError::Dimension(format!(
                "encoder needs 3 channels and sides divisible by {LATENT_DOWNSAMPLE}, got {c}x{h}x{w}"
            )));
        }
        let z = self.encode_raw(g, x);
        Ok(g.scale(z, self.metadata.latent_scale))
    }

    pub fn decode_g(&self, g: &mut Graph, z: Var) -> Result<Var> {
        let mut h = g.scale(z, 1.0 / self.metadata.latent_scale);
        for (i, conv) in self.decoder.iter().enumerate() {
            h = conv.forward(g, &self.store, h);
            if i < 2 {
                let (_, _, hh, ww) = g.value(h).dims4()?;
                h = g.spatial(h, vec![Rc::new(resample::nearest_up_map(hh, ww, 2))]);
            }
            if i + 1 < self.decoder.len() {
                h = g.silu(h);
            }
        }
        let h = g.add_scalar(h, 1.0);
        Ok(g.scale(h, 0.5))
    }

    pub fn encode(&self, frame: &Frame) -> Result<Tensor> {
        let mut g = Graph::inference();
        let x = g.constant(frame.to_tensor());
        let z = self.encode_g(&mut g, x)?;
        Ok(g.value(z).clone())
    }

    pub fn reconstruct(&self, frame: &Frame) -> Result<Frame> {
        let mut g = Graph::inference();
        let x = g.constant(frame.to_tensor());
        let z = self.encode_g(&mut g, x)?;
        let y = self.decode_g(&mut g, z)?;
        let y = g.clamp(y, 0.0, 1.0);
        Frame::from_tensor(g.value(y))
    }

    pub(crate) fn attach_adapters<R: Rng>(&mut self, cfg: LoraConfig, rng: &mut R) -> Result<usize> {
        for conv in &self.decoder {
            self.store.set_trainable(conv.weight, false);
            self.store.set_trainable(conv.bias, false);
        }
        let mut convs: Vec<&mut AdaptedConv> = self.encoder.iter_mut().collect();
        adapt_all(&mut convs, &mut self.store, cfg, rng)
    }

    pub(crate) fn set_adapters_trainable(&mut self, trainable: bool) {
        let convs: Vec<&AdaptedConv> = self.encoder.iter().collect();
        set_adapters_trainable(&convs, &mut self.store, trainable);
    }

    pub fn has_adapters(&self) -> bool {
        self.encoder.iter().any(|c| c.adapter.is_some())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| VsrError::io(dir, e))?;
        let p = dir.join("weights.bin");
        let f = fs::File::create(&p).map_err(|e| VsrError::io(&p, e))?;
        self.store
            .write_archive(std::io::BufWriter::new(f))
            .map_err(|e| VsrError::io(&p, e))?;
        write_json(&dir.join("config.json"), &self.config)?;
        write_json(&dir.join("meta.json"), &self.metadata)
    }

    /// Loads a checkpoint written by [`save`](Self::save) before any adapter
    /// was attached.
    pub fn load(dir: &Path) -> Result<Self> {
        let config: AutoencoderConfig = read_json(&dir.join("config.json"))?;
        let metadata: AutoencoderMetadata = read_json(&dir.join("meta.json"))?;
        let mut ae = Self::new(&config, metadata.seed)?;
        let p = dir.join("weights.bin");
        let f = fs::File::open(&p).map_err(|e| VsrError::io(&p, e))?;
        let stored = ParamStore::read_archive(std::io::BufReader::new(f))?;
        ae.store.load_values_from(&stored)?;
        ae.metadata = metadata;
        Ok(ae)
    }
}

fn random_crop(frame: &Frame, crop: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (h, w, c) = frame.shape();
    let y0 = rng.random_range(0..=h - crop);
    let x0 = rng.random_range(0..=w - crop);
    let mut out = Vec::with_capacity(c * crop * crop);
    for ch in 0..c {
        for y in 0..crop {
            for x in 0..crop {
                out.push(frame.get(y0 + y, x0 + x, ch));
            }
        }
    }
    out
}

/// Mean reconstruction PSNR over `frames`.
pub fn reconstruction_psnr(ae: &LatentAutoencoder, frames: &[Frame]) -> Result<f64> {
    let mut total = 0.0;
    for f in frames {
        let r = ae.reconstruct(f)?;
        let mse = f.data().iter().zip(r.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / f.data().len() as f64;
        total += 10.0 * (1.0 / mse.max(1e-20)).log10();
    }
    Ok(total / frames.len() as f64)
}

/// Trains the autoencoder with an MSE objective on random crops of `frames`
/// and records held-out PSNR and the latent scale in its metadata.
pub fn pretrain_latent_encoder(
    frames: &[Frame],
    held_out: &[Frame],
    steps: usize,
    cfg: &AutoencoderConfig,
    seed: u64,
) -> Result<LatentAutoencoder> {
    if frames.is_empty() {
        return Err(VsrError::Contract("autoencoder pretraining needs at least one frame".into()));
    }
    let mut ae = LatentAutoencoder::new(cfg, seed)?;
    if frames.iter().any(|f| f.channels() != 3 || f.height() < cfg.crop || f.width() < cfg.crop) {
        return Err(VsrError::Dimension(format!("pretraining frames must be RGB and at least {0}x{0}", cfg.crop)));
    }
    if steps == 0 {
        return Ok(ae);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xae);
    let mut opt = Adam::new(&ae.store);
    let mut last = f64::NAN;
    for step in 0..steps {
        let mut data = Vec::with_capacity(cfg.batch_size * 3 * cfg.crop * cfg.crop);
        for _ in 0..cfg.batch_size {
            let f = &frames[rng.random_range(0..frames.len())];
            data.extend(random_crop(f, cfg.crop, &mut rng));
        }
        let batch = Tensor::from_vec(&[cfg.batch_size, 3, cfg.crop, cfg.crop], data)?;
        let mut g = Graph::new();
        let x = g.constant(batch);
        let z = ae.encode_g(&mut g, x)?;
        let y = ae.decode_g(&mut g, z)?;
        let d = g.sub(y, x);
        let sq = g.square(d);
        let loss = g.mean(sq);
        last = g.value(loss).item();
        if !last.is_finite() {
            return Err(VsrError::NonFinite {
                term: "autoencoder_reconstruction".into(),
                step: step as u64,
            });
        }
        let grads = g.backward(loss).params(&g, &ae.store);
        // cosine decay over the last half keeps the final iterates stable
        let progress = step as f64 / steps as f64;
        let lr = if progress < 0.5 {
            cfg.learning_rate
        } else {
            cfg.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * (progress - 0.5) * 2.0).cos()).max(0.02)
        };
        opt.step(&mut ae.store, &grads, lr)?;
    }
    let mut sq = 0.0;
    let mut n = 0usize;
    for f in frames.iter().take(16) {
        let z = ae.encode(f)?;
        let mean = z.data().iter().sum::<f64>() / z.numel() as f64;
        sq += z.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>();
        n += z.numel();
    }
    let std = (sq / n as f64).sqrt();
    ae.metadata.latent_scale = if std > 1e-8 { 1.0 / std } else { 1.0 };
    let eval = if held_out.is_empty() { frames } else { held_out };
    let psnr = reconstruction_psnr(&ae, eval)?;
    ae.metadata.steps = steps;
    ae.metadata.untrained = false;
    ae.metadata.psnr_db = Some(psnr);
    ae.metadata.target_met = psnr >= cfg.target_psnr_db;
    ae.metadata.final_loss = Some(last);
    Ok(ae)
}
