use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{join, Linear, Module};
use crate::error::{contract, Result};
use crate::tensor::{Graph, Param, Scalar, Tensor, Var};

/// Extent of one non-overlapping patch: `channels × samples × frames`
/// (written `h × w × t`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tubelet {
    pub channels: usize,
    pub samples: usize,
    pub frames: usize,
}

impl Tubelet {
    pub const fn new(channels: usize, samples: usize, frames: usize) -> Self {
        Self {
            channels,
            samples,
            frames,
        }
    }

    pub fn volume(&self) -> usize {
        self.channels * self.samples * self.frames
    }

    /// Token grid for a `frames × channels × width` clip.
    pub fn grid(&self, frames: usize, channels: usize, width: usize) -> Result<TokenGrid> {
        if self.volume() == 0
            || frames % self.frames != 0
            || channels % self.channels != 0
            || width % self.samples != 0
        {
            return Err(contract(format!(
                "clip {frames}x{channels}x{width} is not divisible by tubelet {self} (pad first)"
            )));
        }
        Ok(TokenGrid {
            temporal: frames / self.frames,
            channel: channels / self.channels,
            time: width / self.samples,
        })
    }
}

impl fmt::Display for Tubelet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.samples, self.frames)
    }
}

/// Token layout: temporal outermost, then channel, then time-within-window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenGrid {
    pub temporal: usize,
    pub channel: usize,
    pub time: usize,
}

impl TokenGrid {
    pub fn len(&self) -> usize {
        self.temporal * self.channel * self.time
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cells in one temporal slice.
    pub fn plane(&self) -> usize {
        self.channel * self.time
    }

    pub fn index(&self, t: usize, c: usize, w: usize) -> usize {
        (t * self.channel + c) * self.time + w
    }

    pub fn coords(&self, index: usize) -> (usize, usize, usize) {
        let w = index % self.time;
        let c = (index / self.time) % self.channel;
        (index / self.plane(), c, w)
    }
}

/// Rearrange a `frames × channels × width` clip into `[N, t·h·w]` patch rows.
pub fn unfold_tubelets<T: Scalar>(clip: &Tensor<T>, tubelet: Tubelet) -> Result<(Tensor<T>, TokenGrid)> {
    let &[frames, channels, width] = clip.shape() else {
        return Err(contract(format!("clip must be 3-D, got {:?}", clip.shape())));
    };
    let grid = tubelet.grid(frames, channels, width)?;
    let Tubelet {
        channels: h,
        samples: w,
        frames: t,
    } = tubelet;
    let src = clip.data();
    let mut out = Vec::with_capacity(clip.len());
    for ti in 0..grid.temporal {
        for ci in 0..grid.channel {
            for wi in 0..grid.time {
                for dt in 0..t {
                    for dh in 0..h {
                        let base = ((ti * t + dt) * channels + ci * h + dh) * width + wi * w;
                        out.extend_from_slice(&src[base..base + w]);
                    }
                }
            }
        }
    }
    Ok((Tensor::new([grid.len(), tubelet.volume()], out)?, grid))
}

/// Stride-equals-kernel 3-D convolution from one input plane to `dim`
/// channels, stored as a `[t·h·w, dim]` projection of unfolded patches.
#[derive(Clone, Debug)]
pub struct TubeletEmbed<T: Scalar = f32> {
    pub tubelet: Tubelet,
    pub proj: Linear<T>,
}

impl<T: Scalar> TubeletEmbed<T> {
    pub fn new<R: Rng + ?Sized>(tubelet: Tubelet, dim: usize, rng: &mut R) -> Self {
        Self {
            tubelet,
            proj: Linear::new(tubelet.volume(), dim, true, rng),
        }
    }

    /// Kernel weight for output channel `out` at offset `(dt, dh, dw)`.
    pub fn kernel_at(&self, out: usize, dt: usize, dh: usize, dw: usize) -> T {
        let Tubelet { channels: h, samples: w, .. } = self.tubelet;
        self.proj.weight.value.at(&[(dt * h + dh) * w + dw, out])
    }

    /// Embed already-unfolded patch rows.
    pub fn forward(&self, g: &mut Graph<T>, patches: &Tensor<T>) -> Result<Var> {
        let x = g.constant(patches.clone());
        self.proj.forward(g, x)
    }

    pub fn embed_clip(&self, g: &mut Graph<T>, clip: &Tensor<T>) -> Result<(Var, TokenGrid)> {
        let (patches, grid) = unfold_tubelets(clip, self.tubelet)?;
        Ok((self.forward(g, &patches)?, grid))
    }
}

impl<T: Scalar> Module<T> for TubeletEmbed<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param<T>)) {
        self.proj.visit(&join(prefix, "proj"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param<T>)) {
        self.proj.visit_mut(&join(prefix, "proj"), f);
    }
}
