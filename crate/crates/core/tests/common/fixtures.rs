#![allow(dead_code)]

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vsr_core::adversarial::{AutoencoderConfig, DenoiserConfig, PixelDiscConfig};
use vsr_core::backbone::ModelConfig;
use vsr_core::data::{
    clip_dir_name, save_training_clip, DegradationConfig, Frame, SceneTemplate, TrainingClip,
};
use vsr_core::trainer::TrainConfig;

pub fn random_frame(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Frame {
    Frame::new(h, w, 3, (0..3 * h * w).map(|_| rng.random::<f64>()).collect()).unwrap()
}

pub fn random_frames(seed: u64, n: usize, h: usize, w: usize) -> Vec<Frame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_frame(&mut rng, h, w)).collect()
}

/// Smallest generator that still has two levels and a context window.
pub fn tiny_model(k: usize) -> ModelConfig {
    ModelConfig {
        context_radius: k,
        base_channels: 4,
        channel_multipliers: vec![1, 2],
        norm_groups: 2,
        ..ModelConfig::pruned()
    }
}

pub fn tiny_scenes(hr: usize, frames: usize) -> SceneTemplate {
    SceneTemplate {
        height: hr,
        width: hr,
        num_frames: frames,
        sprites: [1, 2],
        sprite_size: [hr as f64 / 5.0, hr as f64 / 3.0],
        occluders: [0, 1],
        occluder_size: [hr as f64 / 8.0, hr as f64 / 4.0],
        max_speed: 2.0,
        ..SceneTemplate::default()
    }
}

pub fn tiny_clips(count: usize, hr: usize, frames: usize, seed: u64) -> Vec<TrainingClip> {
    let tpl = tiny_scenes(hr, frames);
    (0..count)
        .map(|i| {
            let spec = tpl.sample(seed + i as u64);
            let deg = DegradationConfig {
                seed: seed + 100 + i as u64,
                ..DegradationConfig::default()
            };
            TrainingClip::synthesize(&spec, &deg).unwrap().0
        })
        .collect()
}

pub fn write_tiny_dataset(dir: &Path, count: usize, hr: usize, frames: usize, seed: u64) {
    let tpl = tiny_scenes(hr, frames);
    for i in 0..count {
        let spec = tpl.sample(seed + i as u64);
        let deg = DegradationConfig {
            seed: seed + 100 + i as u64,
            ..DegradationConfig::default()
        };
        let (clip, params) = TrainingClip::synthesize(&spec, &deg).unwrap();
        save_training_clip(&dir.join(clip_dir_name(i)), &clip, &spec, &params).unwrap();
    }
}

/// Training config with every component enabled but sized to run in seconds.
pub fn tiny_train_config() -> TrainConfig {
    let mut c = TrainConfig {
        lr: 1e-3,
        lr_halving_period_epochs: 1,
        total_epochs: 2,
        steps_per_epoch: 2,
        batch_size: 2,
        checkpoint_every_epochs: 1,
        model: tiny_model(1),
        ..TrainConfig::default()
    };
    c.adversarial.autoencoder = AutoencoderConfig {
        base_channels: 4,
        batch_size: 2,
        crop: 16,
        ..AutoencoderConfig::default()
    };
    c.adversarial.autoencoder_steps = 10;
    c.adversarial.denoiser = DenoiserConfig {
        channels: 8,
        blocks: 1,
        batch_size: 4,
        ..DenoiserConfig::default()
    };
    c.adversarial.denoiser_steps = 10;
    c.adversarial.pixel = PixelDiscConfig {
        stem_channels: [4, 8, 8],
        head_channels: 8,
        ..PixelDiscConfig::default()
    };
    c
}
