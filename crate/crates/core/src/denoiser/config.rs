use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::Padding;
use crate::{Error, Result};

/// How long-range context is obtained at the attention levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Self-attention over the whole feature map.
    GlobalSelfAttention,
    /// Self-attention restricted to four non-overlapping quadrants.
    LocalSelfAttention,
    /// No attention; twice the residual blocks at the attention levels.
    MoreResNetBlocks,
    /// Like `MoreResNetBlocks`, with dilation `2^j` on the `j`-th block of
    /// each attention level.
    DilatedConvolutions,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::GlobalSelfAttention,
        Variant::LocalSelfAttention,
        Variant::MoreResNetBlocks,
        Variant::DilatedConvolutions,
    ];

    pub fn uses_attention(self) -> bool {
        matches!(self, Variant::GlobalSelfAttention | Variant::LocalSelfAttention)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchitectureConfig {
    /// Channels of the conditioning image `x`.
    pub cond_channels: usize,
    /// Channels of the target / noisy image.
    pub target_channels: usize,
    pub base_channels: usize,
    /// Width multiplier per resolution level, finest first.
    pub channel_multipliers: Vec<usize>,
    pub variant: Variant,
    /// Level indices (0 = full resolution) that carry attention, or the
    /// extra residual blocks for the fully convolutional variants.
    pub attention_levels: Vec<usize>,
    pub blocks_per_level: usize,
    pub norm_groups: usize,
    /// Width of the sinusoidal noise-level features.
    pub embedding_dim: usize,
    pub padding: Padding,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self {
            cond_channels: 3,
            target_channels: 3,
            base_channels: 32,
            channel_multipliers: vec![1, 2, 4],
            variant: Variant::GlobalSelfAttention,
            attention_levels: vec![0, 1, 2],
            blocks_per_level: 1,
            norm_groups: 8,
            embedding_dim: 32,
            padding: Padding::Zero,
        }
    }
}

impl ArchitectureConfig {
    pub fn levels(&self) -> usize {
        self.channel_multipliers.len()
    }

    pub fn level_channels(&self, level: usize) -> usize {
        self.base_channels * self.channel_multipliers[level]
    }

    pub fn is_attention_level(&self, level: usize) -> bool {
        self.attention_levels.contains(&level)
    }

    /// Residual blocks per level on each path, with the dilation of each.
    pub fn block_dilations(&self, level: usize) -> Vec<usize> {
        let extra = self.is_attention_level(level) && !self.variant.uses_attention();
        let count = if extra { 2 * self.blocks_per_level } else { self.blocks_per_level };
        (0..count)
            .map(|j| {
                if extra && self.variant == Variant::DilatedConvolutions {
                    1 << j
                } else {
                    1
                }
            })
            .collect()
    }

    /// Spatial sizes must be divisible by this.
    pub fn spatial_multiple(&self) -> usize {
        let mut m = 1 << (self.levels() - 1);
        if self.variant == Variant::LocalSelfAttention {
            for &l in &self.attention_levels {
                m = m.max(1 << (l + 1));
            }
        }
        m
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: alloc::string::String| Err(Error::InvalidConfig(m));
        if self.channel_multipliers.len() < 2 {
            return fail("need at least two resolution levels".into());
        }
        if self.cond_channels == 0 || self.target_channels == 0 || self.base_channels == 0 {
            return fail("channel counts must be positive".into());
        }
        if self.channel_multipliers.contains(&0) {
            return fail("zero channel multiplier".into());
        }
        if self.blocks_per_level == 0 {
            return fail("blocks_per_level must be positive".into());
        }
        if let Some(l) = self.attention_levels.iter().find(|&&l| l >= self.levels()) {
            return fail(alloc::format!("attention level {l} not among {} levels", self.levels()));
        }
        if self.embedding_dim < 2 || self.embedding_dim % 2 != 0 {
            return fail(alloc::format!("embedding_dim {} must be even and >= 2", self.embedding_dim));
        }
        if self.norm_groups == 0 {
            return fail("norm_groups must be positive".into());
        }
        Ok(())
    }
}
