use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::nn::TokenGrid;
use crate::tensor::{Scalar, Tensor};

/// Multi-block mask geometry. Blocks live on the channel × time plane and
/// are replicated across every temporal grid index.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskConfig {
    pub num_blocks: usize,
    /// Block area as a fraction of the plane.
    pub spatial_scale: (f64, f64),
    /// Block aspect ratio, relative to the plane's own aspect.
    pub aspect_ratio: (f64, f64),
    /// Draws attempted before the degenerate-mask guard intervenes.
    pub max_attempts: usize,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            num_blocks: 2,
            spatial_scale: (0.15, 0.45),
            aspect_ratio: (0.75, 1.35),
            max_attempts: 20,
        }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_blocks == 0 || self.max_attempts == 0 {
            return Err(config("mask num_blocks and max_attempts must be positive"));
        }
        let (s0, s1) = self.spatial_scale;
        let (a0, a1) = self.aspect_ratio;
        if !(s0 > 0.0 && s0 <= s1 && s1 <= 1.0) {
            return Err(config(format!("mask spatial_scale ({s0}, {s1}) must satisfy 0 < lo <= hi <= 1")));
        }
        if !(a0 > 0.0 && a0 <= a1 && a1.is_finite()) {
            return Err(config(format!("mask aspect_ratio ({a0}, {a1}) must satisfy 0 < lo <= hi")));
        }
        Ok(())
    }
}

/// A rectangle on the channel × time plane: `(top, left, height, width)` in grid cells.
pub type Block = (usize, usize, usize, usize);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskSpec {
    pub grid: TokenGrid,
    /// Sorted token indices hidden from the context encoder.
    pub masked: Vec<usize>,
    /// Sorted complement of `masked`.
    pub visible: Vec<usize>,
    /// Set when random draws kept producing an empty or full mask and one
    /// cell was flipped to restore a proper split.
    pub guard_triggered: bool,
}

impl MaskSpec {
    fn from_plane(grid: TokenGrid, plane: &[bool], guard_triggered: bool) -> Self {
        let mut masked = Vec::new();
        let mut visible = Vec::new();
        for i in 0..grid.len() {
            if plane[i % grid.plane()] {
                masked.push(i);
            } else {
                visible.push(i);
            }
        }
        Self {
            grid,
            masked,
            visible,
            guard_triggered,
        }
    }

    /// A mask nothing is hidden by; useful for full-sequence encoding.
    pub fn empty(grid: TokenGrid) -> Self {
        Self::from_plane(grid, &vec![false; grid.plane()], false)
    }

    pub fn masked_fraction(&self) -> f64 {
        self.masked.len() as f64 / self.grid.len() as f64
    }

    /// Positional rows of the masked tokens.
    pub fn delta_y<T: Scalar>(&self, positions: &Tensor<T>) -> Result<Tensor<T>> {
        positions.gather_rows(&self.masked)
    }
}

/// Mask exactly the given blocks (clamped to the plane), across all temporal indices.
pub fn mask_from_blocks(grid: TokenGrid, blocks: &[Block]) -> MaskSpec {
    let mut plane = vec![false; grid.plane()];
    for &(top, left, h, w) in blocks {
        for c in top.min(grid.channel)..(top + h).min(grid.channel) {
            for t in left.min(grid.time)..(left + w).min(grid.time) {
                plane[c * grid.time + t] = true;
            }
        }
    }
    MaskSpec::from_plane(grid, &plane, false)
}

fn draw(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn sample_block<R: Rng + ?Sized>(grid: TokenGrid, cfg: &MaskConfig, rng: &mut R) -> Block {
    let mut rng = rng;
    let s = draw(&mut rng, cfg.spatial_scale);
    let a = draw(&mut rng, (cfg.aspect_ratio.0.ln(), cfg.aspect_ratio.1.ln())).exp();
    let h = ((grid.channel as f64 * (s * a).sqrt()).round() as usize).clamp(1, grid.channel);
    let w = ((grid.time as f64 * (s / a).sqrt()).round() as usize).clamp(1, grid.time);
    let top = rng.random_range(0..=grid.channel - h);
    let left = rng.random_range(0..=grid.time - w);
    (top, left, h, w)
}

/// Union of `num_blocks` random rectangles, redrawn while the result masks
/// nothing or everything.
pub fn sample_mask<R: Rng + ?Sized>(grid: TokenGrid, cfg: &MaskConfig, rng: &mut R) -> Result<MaskSpec> {
    cfg.validate()?;
    if grid.plane() < 2 {
        return Err(config(format!("a {}x{} plane cannot be split", grid.channel, grid.time)));
    }
    let mut last = Vec::new();
    for _ in 0..cfg.max_attempts {
        let blocks: Vec<Block> = (0..cfg.num_blocks).map(|_| sample_block(grid, cfg, rng)).collect();
        let spec = mask_from_blocks(grid, &blocks);
        if !spec.masked.is_empty() && !spec.visible.is_empty() {
            return Ok(spec);
        }
        last = blocks;
    }
    let mut plane = vec![false; grid.plane()];
    for &i in mask_from_blocks(grid, &last).masked.iter().take_while(|&&i| i < grid.plane()) {
        plane[i] = true;
    }
    let cell = rng.random_range(0..grid.plane());
    plane[cell] = !plane[cell];
    Ok(MaskSpec::from_plane(grid, &plane, true))
}
