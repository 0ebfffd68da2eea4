//! The pruned one-step generator and its multi-frame input stem.

mod generator;
mod input;
mod layers;
mod window;

pub use generator::{param_count, reduction_ratio, Generator};
pub use input::{build_input, pixel_shuffle_frame, pixel_unshuffle_frame, InputStack};
pub use window::{BicubicStub, BoxStub, WindowModel};

use serde::{Deserialize, Serialize};

use crate::error::{Result, VsrError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Frames on each side of the centre; the window holds `2k+1` frames.
    pub context_radius: usize,
    pub upscale_factor: usize,
    pub unshuffle_factor: usize,
    pub in_channels: usize,
    pub base_channels: usize,
    pub channel_multipliers: Vec<usize>,
    pub num_res_blocks_per_level: usize,
    pub bottleneck_blocks: usize,
    pub use_cross_attention: bool,
    pub use_timestep_embedding: bool,
    pub norm_groups: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::pruned()
    }
}

impl ModelConfig {
    /// No attention, no timestep machinery, one bottleneck block.
    pub fn pruned() -> Self {
        Self {
            context_radius: 2,
            upscale_factor: 4,
            unshuffle_factor: 2,
            in_channels: 3,
            base_channels: 32,
            channel_multipliers: vec![1, 2, 4],
            num_res_blocks_per_level: 1,
            bottleneck_blocks: 1,
            use_cross_attention: false,
            use_timestep_embedding: false,
            norm_groups: 8,
        }
    }

    /// The unpruned trunk at the same widths: a transformer block after every
    /// residual block, timestep embedding, and a four-block bottleneck.
    pub fn reference() -> Self {
        Self {
            bottleneck_blocks: 4,
            use_cross_attention: true,
            use_timestep_embedding: true,
            ..Self::pruned()
        }
    }

    /// Small pruned preset sized for CPU training runs.
    pub fn desk() -> Self {
        Self {
            base_channels: 16,
            channel_multipliers: vec![1, 2],
            norm_groups: 4,
            ..Self::pruned()
        }
    }

    pub fn window_len(&self) -> usize {
        2 * self.context_radius + 1
    }

    /// Channels of the unshuffled input stack.
    pub fn input_channels(&self) -> usize {
        self.window_len() * self.in_channels * self.unshuffle_factor * self.unshuffle_factor
    }

    /// Spatial alignment the LR input must satisfy.
    pub fn size_multiple(&self) -> usize {
        self.unshuffle_factor << (self.channel_multipliers.len().saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(VsrError::Config(m));
        if self.upscale_factor == 0 || self.unshuffle_factor == 0 {
            return bad("upscale_factor and unshuffle_factor must be at least 1".into());
        }
        if !matches!(self.in_channels, 1 | 3) {
            return bad(format!("in_channels must be 1 or 3, got {}", self.in_channels));
        }
        if self.base_channels == 0 || self.channel_multipliers.is_empty() || self.channel_multipliers.contains(&0) {
            return bad("channel widths must be positive".into());
        }
        if self.norm_groups == 0 {
            return bad("norm_groups must be positive".into());
        }
        for m in &self.channel_multipliers {
            let c = self.base_channels * m;
            if c % self.norm_groups.min(c) != 0 {
                return bad(format!("width {c} not divisible by {} norm groups", self.norm_groups));
            }
        }
        if self.use_timestep_embedding && self.base_channels < 2 {
            return bad("timestep embedding needs base_channels ≥ 2".into());
        }
        Ok(())
    }

    /// True when no attention or timestep component is present.
    pub fn is_pruned(&self) -> bool {
        !self.use_cross_attention && !self.use_timestep_embedding && self.bottleneck_blocks == 1
    }
}
