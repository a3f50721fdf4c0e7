use serde::{Deserialize, Serialize};

use super::WindowedRecording;
use crate::error::{config, contract, Result};
use crate::nn::Tubelet;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClipConfig {
    pub frames: usize,
    /// Take every `sampling_rate`-th window.
    pub sampling_rate: usize,
    pub num_clips: usize,
    pub tubelet: Tubelet,
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self {
            frames: 16,
            sampling_rate: 3,
            num_clips: 1,
            tubelet: Tubelet::new(4, 30, 4),
        }
    }
}

impl ClipConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.sampling_rate == 0 || self.num_clips == 0 {
            return Err(config("frames, sampling_rate and num_clips must be positive"));
        }
        if self.frames % self.tubelet.frames != 0 {
            return Err(config(format!(
                "{} frames not divisible by tubelet {}",
                self.frames, self.tubelet
            )));
        }
        Ok(())
    }

    /// Windows spanned by one clip.
    pub fn span(&self) -> usize {
        (self.frames - 1) * self.sampling_rate + 1
    }

    /// `(channels, width)` after divisibility padding and truncation.
    pub fn padded_extent(&self, channels: usize, width: usize) -> (usize, usize) {
        let h = self.tubelet.channels;
        let w = self.tubelet.samples;
        (channels.div_ceil(h) * h, width / w * w)
    }
}

/// A `frames × channels × width` stack of windows from one recording.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub data: Tensor<f32>,
    pub recording: String,
    /// Source window index of each frame.
    pub windows: Vec<usize>,
}

impl Clip {
    pub fn frames(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn frame(&self, f: usize) -> &[f32] {
        let n = self.channels() * self.width();
        &self.data.data()[f * n..(f + 1) * n]
    }
}

/// Starting window of each clip, evenly spread over the available slack.
pub fn clip_offsets(windows: usize, cfg: &ClipConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    let need = cfg.frames * cfg.sampling_rate;
    if windows < need {
        return Err(contract(format!(
            "{} frames at sampling rate {} need {need} windows, recording has {windows}",
            cfg.frames, cfg.sampling_rate
        )));
    }
    let slack = windows - need;
    Ok((0..cfg.num_clips)
        .map(|i| if cfg.num_clips == 1 { 0 } else { i * slack / (cfg.num_clips - 1) })
        .collect())
}

pub fn sample_clip(rec: &WindowedRecording, cfg: &ClipConfig, clip_index: usize) -> Result<Clip> {
    let offsets = clip_offsets(rec.num_windows(), cfg)?;
    let start = *offsets
        .get(clip_index)
        .ok_or_else(|| contract(format!("clip index {clip_index} out of {} clips", cfg.num_clips)))?;
    sample_clip_at(rec, cfg, start)
}

/// Clip whose first frame is window `start`.
pub fn sample_clip_at(rec: &WindowedRecording, cfg: &ClipConfig, start: usize) -> Result<Clip> {
    cfg.validate()?;
    if start + cfg.span() > rec.num_windows() {
        return Err(contract(format!(
            "clip starting at window {start} spans {} windows, recording has {}",
            cfg.span(),
            rec.num_windows()
        )));
    }
    let (c_in, w_in) = (rec.channels(), rec.width());
    let (c_out, w_out) = cfg.padded_extent(c_in, w_in);
    if w_out == 0 {
        return Err(contract(format!(
            "window width {w_in} shorter than tubelet width {}",
            cfg.tubelet.samples
        )));
    }
    let windows: Vec<usize> = (0..cfg.frames).map(|f| start + f * cfg.sampling_rate).collect();
    let mut data = vec![0.0f32; cfg.frames * c_out * w_out];
    for (f, &win) in windows.iter().enumerate() {
        let src = rec.window(win);
        for c in 0..c_in {
            let dst = (f * c_out + c) * w_out;
            data[dst..dst + w_out].copy_from_slice(&src[c * w_in..c * w_in + w_out]);
        }
    }
    Ok(Clip {
        data: Tensor::new([cfg.frames, c_out, w_out], data)?,
        recording: rec.id.clone(),
        windows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Subject;

    fn windowed(n: usize) -> WindowedRecording {
        WindowedRecording {
            id: "r".into(),
            windows: Tensor::from_fn([n, 19, 500], |i| i as f32),
            stride: 250,
            label: None,
            subject: Subject::default(),
        }
    }

    #[test]
    fn offsets_stay_in_slack() {
        let cfg = ClipConfig {
            frames: 32,
            sampling_rate: 3,
            num_clips: 4,
            ..Default::default()
        };
        let offs = clip_offsets(119, &cfg).unwrap();
        assert_eq!(offs.first(), Some(&0));
        assert_eq!(offs.last(), Some(&23));
        assert!(offs.windows(2).all(|p| p[0] <= p[1]));
        assert!(clip_offsets(95, &cfg).is_err());
    }

    #[test]
    fn first_clip_is_verbatim_and_padded() {
        let rec = windowed(119);
        let cfg = ClipConfig {
            frames: 16,
            sampling_rate: 1,
            ..Default::default()
        };
        let clip = sample_clip(&rec, &cfg, 0).unwrap();
        assert_eq!(clip.data.shape(), &[16, 20, 480]);
        assert_eq!(clip.windows, (0..16).collect::<Vec<_>>());
        for f in 0..16 {
            let src = rec.window(f);
            let dst = clip.frame(f);
            for c in 0..19 {
                assert_eq!(&dst[c * 480..(c + 1) * 480], &src[c * 500..c * 500 + 480]);
            }
            assert!(dst[19 * 480..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn strided_sampling() {
        let clip = sample_clip(&windowed(119), &ClipConfig::default(), 0).unwrap();
        assert_eq!(clip.windows, (0..16).map(|f| 3 * f).collect::<Vec<_>>());
    }
}
