use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Clip;
use crate::error::{config, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Augmentation {
    Spatial,
    Noise,
    Scale,
    Flip,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationSpec {
    pub enabled: Vec<Augmentation>,
    /// Crop aspect ratio, relative to the frame's own aspect.
    pub random_resize_aspect_ratio: (f64, f64),
    /// Crop area as a fraction of the frame.
    pub random_resize_scale: (f64, f64),
    pub noise_std: f64,
    pub scale_range: (f64, f64),
    pub flip_probability: f64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            enabled: vec![Augmentation::Flip, Augmentation::Spatial],
            random_resize_aspect_ratio: (0.75, 1.35),
            random_resize_scale: (0.3, 1.0),
            noise_std: 0.1,
            scale_range: (0.9, 1.1),
            flip_probability: 0.5,
        }
    }
}

impl AugmentationSpec {
    pub fn none() -> Self {
        Self {
            enabled: Vec::new(),
            ..Default::default()
        }
    }

    pub fn has(&self, a: Augmentation) -> bool {
        self.enabled.contains(&a)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("random_resize_aspect_ratio", self.random_resize_aspect_ratio),
            ("random_resize_scale", self.random_resize_scale),
            ("scale_range", self.scale_range),
        ] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(config(format!("{name} must satisfy 0 < lo <= hi, got ({lo}, {hi})")));
            }
        }
        if self.random_resize_scale.1 > 1.0 {
            return Err(config("random_resize_scale upper bound exceeds 1"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(config(format!("noise_std must be non-negative, got {}", self.noise_std)));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(config(format!("flip_probability {} outside [0, 1]", self.flip_probability)));
        }
        Ok(())
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Reverse the frame order in place.
pub fn flip_frames(clip: &mut Clip) {
    let n = clip.channels() * clip.width();
    let frames = clip.frames();
    let data = clip.data.data_mut();
    for f in 0..frames / 2 {
        let (head, tail) = data.split_at_mut((frames - 1 - f) * n);
        head[f * n..(f + 1) * n].swap_with_slice(&mut tail[..n]);
    }
    clip.windows.reverse();
}

/// Bilinear resample of `src[top.., left..]` (an `ch × cw` crop of an `h × w` image) back to `h × w`.
fn resize_crop(src: &[f32], w: usize, h: usize, (top, left, ch, cw): (usize, usize, usize, usize), dst: &mut [f32]) {
    let coord = |i: usize, out: usize, crop: usize| -> (usize, usize, f32) {
        let y = ((i as f64 + 0.5) * crop as f64 / out as f64 - 0.5).clamp(0.0, (crop - 1) as f64);
        let y0 = y.floor() as usize;
        (y0, (y0 + 1).min(crop - 1), (y - y0 as f64) as f32)
    };
    let cols: Vec<_> = (0..w).map(|j| coord(j, w, cw)).collect();
    for i in 0..h {
        let (r0, r1, fy) = coord(i, h, ch);
        let row0 = &src[(top + r0) * w + left..];
        let row1 = &src[(top + r1) * w + left..];
        for (j, &(c0, c1, fx)) in cols.iter().enumerate() {
            let a = row0[c0] + (row0[c1] - row0[c0]) * fx;
            let b = row1[c0] + (row1[c1] - row1[c0]) * fx;
            dst[i * w + j] = a + (b - a) * fy;
        }
    }
}

fn spatial<R: Rng + ?Sized>(clip: &mut Clip, spec: &AugmentationSpec, rng: &mut R) {
    let (h, w) = (clip.channels(), clip.width());
    let s = uniform(rng, spec.random_resize_scale);
    let (alo, ahi) = spec.random_resize_aspect_ratio;
    let r = uniform(rng, (alo.ln(), ahi.ln())).exp();
    let ch = ((h as f64 * (s / r).sqrt()).round() as usize).clamp(1, h);
    let cw = ((w as f64 * (s * r).sqrt()).round() as usize).clamp(1, w);
    let top = rng.random_range(0..=h - ch);
    let left = rng.random_range(0..=w - cw);
    let mut out = vec![0.0f32; h * w];
    for frame in clip.data.data_mut().chunks_mut(h * w) {
        resize_crop(frame, w, h, (top, left, ch, cw), &mut out);
        frame.copy_from_slice(&out);
    }
}

/// Apply the enabled augmentations in a fixed order: spatial, flip, scale, noise.
pub fn augment<R: Rng + ?Sized>(clip: &Clip, spec: &AugmentationSpec, rng: &mut R) -> Result<Clip> {
    spec.validate()?;
    let mut out = clip.clone();
    if spec.has(Augmentation::Spatial) {
        spatial(&mut out, spec, rng);
    }
    if spec.has(Augmentation::Flip) && rng.random_bool(spec.flip_probability) {
        flip_frames(&mut out);
    }
    if spec.has(Augmentation::Scale) {
        let u = uniform(rng, spec.scale_range) as f32;
        out.data.data_mut().iter_mut().for_each(|v| *v *= u);
    }
    if spec.has(Augmentation::Noise) && spec.noise_std > 0.0 {
        let normal = Normal::new(0.0, spec.noise_std).map_err(|e| config(e.to_string()))?;
        out.data.data_mut().iter_mut().for_each(|v| *v += normal.sample(rng) as f32);
    }
    Ok(out)
}
