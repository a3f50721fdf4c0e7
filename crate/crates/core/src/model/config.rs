use serde::{Deserialize, Serialize};

use super::MaskConfig;
use crate::error::{config, Result};
use crate::nn::{TokenGrid, Tubelet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    /// Two blocks of width 32; for smoke tests and desk-scale runs.
    #[serde(rename = "tiny")]
    Tiny,
    #[serde(rename = "S")]
    S,
    #[serde(rename = "M")]
    M,
    #[serde(rename = "B")]
    B,
}

impl Preset {
    /// `(depth, heads, embed_dim, predictor_depth)`.
    pub fn dims(self) -> (usize, usize, usize, usize) {
        match self {
            Preset::Tiny => (2, 2, 32, 2),
            Preset::S => (12, 3, 192, 4),
            Preset::M => (12, 6, 384, 6),
            Preset::B => (12, 12, 768, 12),
        }
    }
}

/// Where the L1 objective is measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossSpace {
    /// Predictor output projected back to the encoder width.
    Encoder,
    /// Raw predictor width; requires `predictor_dim == embed_dim`.
    Predictor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JepaConfig {
    pub preset: Preset,
    pub depth: Option<usize>,
    pub heads: Option<usize>,
    pub embed_dim: Option<usize>,
    pub predictor_depth: Option<usize>,
    pub predictor_dim: Option<usize>,
    pub predictor_heads: Option<usize>,
    pub tubelet: Tubelet,
    pub frames: usize,
    /// Electrodes per window before divisibility padding.
    pub channels: usize,
    /// Samples per window before truncation.
    pub window: usize,
    pub mask: MaskConfig,
    pub normalize_targets: bool,
    pub loss_space: LossSpace,
}

impl Default for JepaConfig {
    fn default() -> Self {
        Self {
            preset: Preset::M,
            depth: None,
            heads: None,
            embed_dim: None,
            predictor_depth: None,
            predictor_dim: None,
            predictor_heads: None,
            tubelet: Tubelet::new(4, 30, 4),
            frames: 16,
            channels: 19,
            window: 500,
            mask: MaskConfig::default(),
            normalize_targets: true,
            loss_space: LossSpace::Encoder,
        }
    }
}

/// Fully resolved architecture sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub depth: usize,
    pub heads: usize,
    pub dim: usize,
    pub predictor_depth: usize,
    pub predictor_dim: usize,
    pub predictor_heads: usize,
}

impl JepaConfig {
    pub fn tiny() -> Self {
        Self {
            preset: Preset::Tiny,
            ..Default::default()
        }
    }

    pub fn dims(&self) -> ModelDims {
        let (depth, heads, dim, pdepth) = self.preset.dims();
        let default_pdim = if self.preset == Preset::Tiny { dim } else { 384 };
        let heads = self.heads.unwrap_or(heads);
        ModelDims {
            depth: self.depth.unwrap_or(depth),
            heads,
            dim: self.embed_dim.unwrap_or(dim),
            predictor_depth: self.predictor_depth.unwrap_or(pdepth),
            predictor_dim: self.predictor_dim.unwrap_or(default_pdim),
            predictor_heads: self.predictor_heads.unwrap_or(heads),
        }
    }

    /// `(channels, width)` after padding channels up and truncating width down.
    pub fn padded_extent(&self) -> (usize, usize) {
        let (h, w) = (self.tubelet.channels, self.tubelet.samples);
        (self.channels.div_ceil(h) * h, self.window / w * w)
    }

    pub fn grid(&self) -> Result<TokenGrid> {
        let (c, w) = self.padded_extent();
        self.tubelet.grid(self.frames, c, w)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims();
        if d.dim == 0 || d.heads == 0 || d.dim % d.heads != 0 {
            return Err(config(format!("embed_dim {} not divisible by {} heads", d.dim, d.heads)));
        }
        if d.predictor_dim == 0 || d.predictor_heads == 0 || d.predictor_dim % d.predictor_heads != 0 {
            return Err(config(format!(
                "predictor_dim {} not divisible by {} heads",
                d.predictor_dim, d.predictor_heads
            )));
        }
        if self.loss_space == LossSpace::Predictor && d.predictor_dim != d.dim {
            return Err(config(format!(
                "predictor-space loss needs predictor_dim == embed_dim ({} vs {})",
                d.predictor_dim, d.dim
            )));
        }
        if self.tubelet.volume() == 0 {
            return Err(config("tubelet extents must be positive"));
        }
        if self.frames == 0 || self.frames % self.tubelet.frames != 0 {
            return Err(config(format!("{} frames not divisible by tubelet {}", self.frames, self.tubelet)));
        }
        if self.window < self.tubelet.samples {
            return Err(config("window shorter than tubelet width"));
        }
        self.mask.validate()?;
        self.grid().map_err(|e| config(e.to_string()))?;
        Ok(())
    }
}
