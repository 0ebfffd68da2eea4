//! Latent score-matching discriminator and pixel-space hinge discriminator.

mod autoencoder;
mod denoiser;
mod lora;
mod pixel;

pub use autoencoder::{
    pretrain_latent_encoder, reconstruction_psnr, AutoencoderConfig, AutoencoderMetadata, LatentAutoencoder,
    LATENT_DOWNSAMPLE,
};
pub use denoiser::{
    latent_adv_loss, latent_adv_loss_g, latent_score, latent_score_g, normal_tensor, pretrain_denoiser, sample_sigma,
    Denoiser, DenoiserConfig, LatentDenoiser,
};
pub use lora::{apply_lora, AdaptedConv, Adapter, LoraConfig};
pub use pixel::{
    gen_loss_from_scores_g, hinge_loss_g, pixel_disc_loss_g, pixel_gen_loss_g, PixelDiscConfig, PixelDiscriminator,
};

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vsr_tensor::{ParamStore, Tensor};

use crate::data::io::{read_json, write_json};
use crate::data::Frame;
use crate::error::{Result, VsrError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdversarialConfig {
    pub autoencoder: AutoencoderConfig,
    pub denoiser: DenoiserConfig,
    pub pixel: PixelDiscConfig,
    pub lora: LoraConfig,
    pub autoencoder_steps: usize,
    pub denoiser_steps: usize,
    /// Learning rate of the latent adapters during adversarial training.
    pub adapter_learning_rate: f64,
    /// Weight of the frozen-decoder reconstruction term that keeps adapted
    /// encoder latents decodable.
    pub adapter_reconstruction_weight: f64,
    pub freeze_adapters: bool,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        Self {
            autoencoder: AutoencoderConfig::default(),
            denoiser: DenoiserConfig::default(),
            pixel: PixelDiscConfig::default(),
            lora: LoraConfig::default(),
            autoencoder_steps: 600,
            denoiser_steps: 400,
            adapter_learning_rate: 1e-4,
            adapter_reconstruction_weight: 1.0,
            freeze_adapters: false,
        }
    }
}

impl AdversarialConfig {
    pub fn validate(&self) -> Result<()> {
        self.autoencoder.validate()?;
        self.denoiser.validate()?;
        if !(self.adapter_learning_rate > 0.0 && self.adapter_reconstruction_weight >= 0.0) {
            return Err(VsrError::Config(
                "adapter learning rate must be positive and reconstruction weight non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Encoder plus denoiser, both frozen with adapters attached.
#[derive(Debug, Clone)]
pub struct LatentDiscriminator {
    pub encoder: LatentAutoencoder,
    pub denoiser: LatentDenoiser,
    pub adapter_params: usize,
}

impl LatentDiscriminator {
    /// Attaches adapters to a pretrained encoder and denoiser.
    pub fn new(mut encoder: LatentAutoencoder, mut denoiser: LatentDenoiser, cfg: &AdversarialConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x10ba);
        let mut adapter_params = encoder.attach_adapters(cfg.lora, &mut rng)?;
        adapter_params += denoiser.attach_adapters(cfg.lora, &mut rng)?;
        if cfg.freeze_adapters {
            encoder.set_adapters_trainable(false);
            denoiser.set_adapters_trainable(false);
        }
        Ok(Self {
            encoder,
            denoiser,
            adapter_params,
        })
    }

    /// Pretrains the autoencoder on `frames`, the denoiser on latents of
    /// random crops, then attaches adapters.
    pub fn pretrain(frames: &[Frame], held_out: &[Frame], cfg: &AdversarialConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let ae = pretrain_latent_encoder(frames, held_out, cfg.autoencoder_steps, &cfg.autoencoder, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc409);
        let crop = cfg.autoencoder.crop;
        let latents: Vec<Tensor> = (0..LATENT_CROPS)
            .map(|_| {
                let f = &frames[rng.random_range(0..frames.len())];
                let y0 = rng.random_range(0..=f.height() - crop);
                let x0 = rng.random_range(0..=f.width() - crop);
                let data = (0..3 * crop * crop)
                    .map(|i| f.get(y0 + (i / crop) % crop, x0 + i % crop, i / (crop * crop)))
                    .collect();
                ae.encode(&Frame::new(crop, crop, 3, data)?)
            })
            .collect::<Result<_>>()?;
        let den = pretrain_denoiser(&latents, cfg.denoiser_steps, &cfg.denoiser, seed.wrapping_add(1))?;
        Self::new(ae, den, cfg, seed)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| VsrError::io(dir, e))?;
        write_json(&dir.join("meta.json"), &self.encoder.metadata)?;
        write_archive(&dir.join("encoder.bin"), self.encoder.store())?;
        write_archive(&dir.join("denoiser.bin"), self.denoiser.store())
    }

    /// Rebuilds the adapted networks for `cfg` and loads the saved values.
    pub fn load(dir: &Path, cfg: &AdversarialConfig, seed: u64) -> Result<Self> {
        let metadata: AutoencoderMetadata = read_json(&dir.join("meta.json"))?;
        let ae = LatentAutoencoder::new(&cfg.autoencoder, metadata.seed)?;
        let den = LatentDenoiser::new(&cfg.denoiser, cfg.autoencoder.latent_channels, seed.wrapping_add(1))?;
        let mut disc = Self::new(ae, den, cfg, seed)?;
        disc.encoder.metadata = metadata;
        disc.encoder.store_mut().load_values_from(&read_archive(&dir.join("encoder.bin"))?)?;
        disc.denoiser.store_mut().load_values_from(&read_archive(&dir.join("denoiser.bin"))?)?;
        Ok(disc)
    }
}

const LATENT_CROPS: usize = 64;

pub fn write_archive(path: &Path, store: &ParamStore) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| VsrError::io(path, e))?;
    store
        .write_archive(std::io::BufWriter::new(f))
        .map_err(|e| VsrError::io(path, e))
}

pub fn read_archive(path: &Path) -> Result<ParamStore> {
    let f = fs::File::open(path).map_err(|e| VsrError::io(path, e))?;
    ParamStore::read_archive(std::io::BufReader::new(f)).map_err(|e| VsrError::io(path, e))
}
