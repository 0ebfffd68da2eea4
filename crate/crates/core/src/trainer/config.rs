use serde::{Deserialize, Serialize};

use crate::adversarial::AdversarialConfig;
use crate::backbone::ModelConfig;
use crate::error::{Result, VsrError};
use crate::losses::LossConfig;

/// Which frame of the loaded window receives supervision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnchorPolicy {
    /// The last frame with a full context window, `a = L − k − 1`.
    LastValid,
    /// The first frame with a full context window, `a = k`; no prior
    /// predictions enter its window.
    FirstValid,
}

/// Switches for the ablation arms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub temporal_loss: bool,
    pub recurrent: bool,
    pub latent_disc: bool,
    pub pixel_disc: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            temporal_loss: true,
            recurrent: true,
            latent_disc: true,
            pixel_disc: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_halving_period_epochs: usize,
    pub total_epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    /// Frames loaded per training window beyond the `2k+1` input window.
    pub extra_frames: usize,
    pub anchor_policy: AnchorPolicy,
    pub checkpoint_every_epochs: usize,
    /// Repeat the context sweep once more before the anchor step, so that
    /// future-side neighbours are also predictions.
    pub second_sweep: bool,
    pub seed: u64,
    pub ablation: Ablation,
    pub loss: LossConfig,
    pub model: ModelConfig,
    pub adversarial: AdversarialConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-5,
            lr_halving_period_epochs: 50,
            total_epochs: 200,
            steps_per_epoch: 10,
            batch_size: 2,
            extra_frames: 2,
            anchor_policy: AnchorPolicy::LastValid,
            checkpoint_every_epochs: 50,
            second_sweep: false,
            seed: 0,
            ablation: Ablation::default(),
            loss: LossConfig::default(),
            model: ModelConfig::desk(),
            adversarial: AdversarialConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(VsrError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.lr_halving_period_epochs == 0 {
            return Err(VsrError::Config("lr_halving_period_epochs must be at least 1".into()));
        }
        if self.steps_per_epoch == 0 || self.batch_size == 0 {
            return Err(VsrError::Config("steps_per_epoch and batch_size must be at least 1".into()));
        }
        if self.checkpoint_every_epochs == 0 {
            return Err(VsrError::Config("checkpoint_every_epochs must be at least 1".into()));
        }
        self.loss.validate()?;
        self.model.validate()?;
        self.adversarial.validate()?;
        let k = self.model.context_radius;
        let a = self.anchor_index();
        if self.ablation.temporal_loss && self.loss.lambda_temp > 0.0 && self.loss.window_d > a - k {
            return Err(VsrError::Config(format!(
                "temporal window D = {} needs that many earlier predictions, but anchor {a} with k = {k} has {}",
                self.loss.window_d,
                a - k
            )));
        }
        Ok(())
    }

    /// Frames per training window.
    pub fn window_frames(&self) -> usize {
        self.model.window_len() + self.extra_frames
    }

    /// Anchor index inside a training window.
    pub fn anchor_index(&self) -> usize {
        let k = self.model.context_radius;
        match self.anchor_policy {
            AnchorPolicy::LastValid => self.window_frames() - k - 1,
            AnchorPolicy::FirstValid => k,
        }
    }

    pub fn total_steps(&self) -> u64 {
        (self.total_epochs * self.steps_per_epoch) as u64
    }
}

/// `lr · 0.5^⌊epoch / period⌋`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr * 0.5f64.powi((epoch / cfg.lr_halving_period_epochs) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_halves_per_period() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0, &cfg), 2e-5);
        assert_eq!(lr_at(49, &cfg), 2e-5);
        assert_eq!(lr_at(50, &cfg), 1e-5);
        assert_eq!(lr_at(100, &cfg), 5e-6);
        assert_eq!(lr_at(150, &cfg), 2.5e-6);
        assert_eq!(lr_at(199, &cfg), 2.5e-6);
    }

    #[test]
    fn anchor_is_last_valid_frame() {
        let cfg = TrainConfig { model: ModelConfig::pruned(), ..TrainConfig::default() };
        assert_eq!(cfg.window_frames(), 7);
        assert_eq!(cfg.anchor_index(), 4);
        cfg.validate().unwrap();
        let bad = TrainConfig { lr: 0.0, ..cfg.clone() };
        assert!(bad.validate().is_err());
        let first = TrainConfig { anchor_policy: AnchorPolicy::FirstValid, ..cfg };
        assert!(first.validate().is_err());
    }
}
