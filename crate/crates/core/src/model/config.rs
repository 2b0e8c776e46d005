use serde::{Deserialize, Serialize};
use vivat_autograd::PadMode;

use crate::error::{validation, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaddingPolicy {
    Zero,
    Reflect,
}

impl PaddingPolicy {
    pub fn mode(self) -> PadMode {
        match self {
            PaddingPolicy::Zero => PadMode::Zero,
            PaddingPolicy::Reflect => PadMode::Reflect,
        }
    }
}

/// Normalization used inside decoder blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderNorm {
    GroupNorm,
    /// Spatially conditional normalization, modulated by the latent sample.
    Scn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub base_channels: usize,
    /// Width multiplier per resolution level; one 2x down/upsample between levels.
    pub channel_multipliers: Vec<usize>,
    pub downscale_factor: usize,
    pub latent_channels: usize,
    pub attention_levels: Vec<usize>,
    pub padding_policy: PaddingPolicy,
    pub decoder_norm: DecoderNorm,
    pub group_norm_groups: usize,
    pub blocks_per_level: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_channels: 3,
            base_channels: 128,
            channel_multipliers: vec![1, 2, 4, 4],
            downscale_factor: 8,
            latent_channels: 16,
            attention_levels: vec![3],
            padding_policy: PaddingPolicy::Reflect,
            decoder_norm: DecoderNorm::Scn,
            group_norm_groups: 32,
            blocks_per_level: 2,
        }
    }
}

impl ModelConfig {
    /// Small network for unit tests and desk-scale runs: `levels` resolutions, f = 2^(levels-1).
    pub fn micro(levels: usize, base_channels: usize, latent_channels: usize) -> Self {
        Self {
            input_channels: 3,
            base_channels,
            channel_multipliers: vec![1; levels],
            downscale_factor: 1 << (levels - 1),
            latent_channels,
            attention_levels: vec![levels - 1],
            padding_policy: PaddingPolicy::Reflect,
            decoder_norm: DecoderNorm::Scn,
            group_norm_groups: base_channels.min(8),
            blocks_per_level: 1,
        }
    }

    pub fn levels(&self) -> usize {
        self.channel_multipliers.len()
    }

    pub fn width(&self, level: usize) -> usize {
        self.base_channels * self.channel_multipliers[level]
    }

    pub fn has_attention(&self, level: usize) -> bool {
        self.attention_levels.contains(&level)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_channels", self.input_channels),
            ("base_channels", self.base_channels),
            ("latent_channels", self.latent_channels),
            ("group_norm_groups", self.group_norm_groups),
            ("blocks_per_level", self.blocks_per_level),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(validation(format!("model.{name} must be at least 1")));
            }
        }
        if self.channel_multipliers.is_empty() || self.channel_multipliers.contains(&0) {
            return Err(validation("model.channel_multipliers must be non-empty and positive"));
        }
        let expected = 1usize << (self.levels() - 1);
        if self.downscale_factor != expected {
            return Err(validation(format!(
                "model.downscale_factor {} inconsistent with {} levels (expected {expected})",
                self.downscale_factor,
                self.levels()
            )));
        }
        for level in 0..self.levels() {
            let w = self.width(level);
            if w % self.group_norm_groups != 0 {
                return Err(validation(format!(
                    "model.group_norm_groups {} does not divide channel width {w} at level {level}",
                    self.group_norm_groups
                )));
            }
        }
        if let Some(bad) = self.attention_levels.iter().find(|&&l| l >= self.levels()) {
            return Err(validation(format!("model.attention_levels contains {bad}, beyond {} levels", self.levels())));
        }
        Ok(())
    }
}
