use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GtpError, Result};
use crate::graph::GraphKind;
use crate::reduction::{ReductionConfig, Strategy};

/// Pooling used by models without a [CLS] token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    /// Mean over surviving image tokens weighted by token size.
    #[default]
    SizeWeighted,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub img_tokens: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub has_cls: bool,
    pub mlp_ratio: usize,
    pub patch_size: usize,
    pub image_size: usize,
    #[serde(default = "default_in_chans")]
    pub in_chans: usize,
    #[serde(default = "default_num_classes")]
    pub num_classes: usize,
    #[serde(default)]
    pub pooling: Pooling,
    #[serde(default)]
    pub reduction: ReductionConfig,
}

fn default_in_chans() -> usize {
    3
}

fn default_num_classes() -> usize {
    1000
}

pub const PRESET_NAMES: [&str; 4] = ["deit-s", "deit-b", "vitm-gap", "tiny"];

impl ModelConfig {
    fn vit(embed_dim: usize, heads: usize, image_size: usize, has_cls: bool) -> Self {
        let grid = image_size / 16;
        Self {
            img_tokens: grid * grid,
            embed_dim,
            depth: 12,
            heads,
            has_cls,
            mlp_ratio: 4,
            patch_size: 16,
            image_size,
            in_chans: 3,
            num_classes: 1000,
            pooling: Pooling::SizeWeighted,
            reduction: ReductionConfig::default(),
        }
    }

    /// DeiT-Small: 12 blocks, 6 heads, width 384, 196 patches plus [CLS].
    pub fn deit_s() -> Self {
        Self::vit(384, 6, 224, true)
    }

    /// DeiT-Base: 12 blocks, 12 heads, width 768, 196 patches plus [CLS].
    pub fn deit_b() -> Self {
        Self::vit(768, 12, 224, true)
    }

    /// ViT-Medium with global average pooling: 12 blocks, 8 heads, width
    /// 512, 256 patches at 256 px, no [CLS].
    pub fn vit_medium_gap() -> Self {
        Self::vit(512, 8, 256, false)
    }

    /// A 4x4-patch toy model for fast tests.
    pub fn tiny() -> Self {
        Self {
            img_tokens: 16,
            embed_dim: 32,
            depth: 3,
            heads: 4,
            has_cls: true,
            mlp_ratio: 4,
            patch_size: 4,
            image_size: 16,
            in_chans: 3,
            num_classes: 10,
            pooling: Pooling::SizeWeighted,
            reduction: ReductionConfig { m_neighbors: 3, ..ReductionConfig::default() },
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "deit-s" | "deit_s" | "deits" => Ok(Self::deit_s()),
            "deit-b" | "deit_b" | "deitb" => Ok(Self::deit_b()),
            "vitm-gap" | "vit-medium-gap" | "vitm_gap" => Ok(Self::vit_medium_gap()),
            "tiny" => Ok(Self::tiny()),
            other => Err(GtpError::Config(format!(
                "unknown preset '{other}' (known: {})",
                PRESET_NAMES.join(", ")
            ))),
        }
    }

    pub fn with_p(mut self, p: usize) -> Self {
        self.reduction.p_per_layer = p;
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| GtpError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn grid_side(&self) -> usize {
        self.image_size / self.patch_size.max(1)
    }

    /// Tokens entering the first block, [CLS] included.
    pub fn total_tokens(&self) -> usize {
        self.img_tokens + usize::from(self.has_cls)
    }

    pub fn patch_dim(&self) -> usize {
        self.in_chans * self.patch_size * self.patch_size
    }

    pub fn hidden_dim(&self) -> usize {
        self.embed_dim * self.mlp_ratio
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    /// Live image tokens after `blocks` reducing blocks.
    pub fn live_after(&self, blocks: usize) -> usize {
        self.img_tokens - blocks * self.reduction.p_per_layer
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(GtpError::Config(msg));
        if self.embed_dim == 0 || self.heads == 0 || self.depth == 0 {
            return bad("embed_dim, heads and depth must be positive".into());
        }
        if !self.embed_dim.is_multiple_of(self.heads) {
            return bad(format!("embed_dim {} not divisible by {} heads", self.embed_dim, self.heads));
        }
        if self.mlp_ratio != 4 {
            return bad(format!("mlp_ratio is fixed at 4, got {}", self.mlp_ratio));
        }
        if self.patch_size == 0 || !self.image_size.is_multiple_of(self.patch_size) {
            return bad(format!("image_size {} not a multiple of patch_size {}", self.image_size, self.patch_size));
        }
        let side = self.grid_side();
        if side * side != self.img_tokens {
            return bad(format!("img_tokens {} does not match a {side}x{side} patch grid", self.img_tokens));
        }
        if self.in_chans == 0 || self.num_classes == 0 {
            return bad("in_chans and num_classes must be positive".into());
        }
        let r = &self.reduction;
        r.validate()?;
        let p = r.p_per_layer;
        if p > 0 {
            if self.depth * p >= self.img_tokens {
                return bad(format!(
                    "infeasible schedule: {} blocks x {p} tokens >= {} image tokens",
                    self.depth, self.img_tokens
                ));
            }
            if matches!(r.graph_kind, GraphKind::Semantic | GraphKind::Mixed) && r.m_neighbors >= self.img_tokens {
                return bad(format!("m_neighbors {} must be below {} image tokens", r.m_neighbors, self.img_tokens));
            }
            if r.strategy == Strategy::ClsAttn && !self.has_cls {
                return Err(GtpError::Strategy("cls-attn needs a model with a [CLS] token".into()));
            }
            if r.strategy == Strategy::CosSim {
                let last = self.live_after(self.depth - 1);
                if p > last / 2 {
                    return bad(format!("bipartite matching cannot merge {p} of {last} tokens in the last block"));
                }
            }
        }
        Ok(())
    }
}
