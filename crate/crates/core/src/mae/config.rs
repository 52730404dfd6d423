use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViTConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub in_chans: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub num_heads: usize,
    pub mlp_ratio: f64,
    pub class_token: bool,
}

impl Default for ViTConfig {
    fn default() -> Self {
        Self::base_16()
    }
}

impl ViTConfig {
    /// ViT-Base/16 at 224 px: the USF-MAE and ViT-B/16 backbone.
    pub fn base_16() -> Self {
        Self { image_size: 224, patch_size: 16, in_chans: 3, embed_dim: 768, depth: 12, num_heads: 12, mlp_ratio: 4.0, class_token: true }
    }

    /// Reduced encoder for CPU-scale experiments.
    pub fn tiny(image_size: usize, patch_size: usize) -> Self {
        Self { image_size, patch_size, in_chans: 3, embed_dim: 32, depth: 2, num_heads: 4, mlp_ratio: 2.0, class_token: true }
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.in_chans
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.patch_size == 0 || self.image_size == 0 || self.image_size % self.patch_size != 0 {
            bad.push(format!("image_size {} not divisible by patch_size {}", self.image_size, self.patch_size));
        }
        if self.num_heads == 0 || self.embed_dim % self.num_heads != 0 {
            bad.push(format!("embed_dim {} not divisible by num_heads {}", self.embed_dim, self.num_heads));
        }
        if self.embed_dim % 4 != 0 {
            bad.push(format!("embed_dim {} must be a multiple of 4 for 2-D sin-cos positions", self.embed_dim));
        }
        if self.in_chans == 0 || self.depth == 0 {
            bad.push("in_chans and depth must be positive".into());
        }
        if !(self.mlp_ratio > 0.0) {
            bad.push("mlp_ratio must be positive".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub embed_dim: usize,
    pub depth: usize,
    pub num_heads: usize,
    pub mlp_ratio: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self { embed_dim: 256, depth: 4, num_heads: 8, mlp_ratio: 4.0 }
    }
}

impl DecoderConfig {
    pub fn tiny() -> Self {
        Self { embed_dim: 32, depth: 1, num_heads: 4, mlp_ratio: 2.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || self.embed_dim % self.num_heads != 0 || self.embed_dim % 4 != 0 || self.depth == 0 {
            return Err(Error::Config(format!("invalid decoder config {self:?}")));
        }
        Ok(())
    }
}
