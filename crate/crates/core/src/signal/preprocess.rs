use serde::{Deserialize, Serialize};

use super::{filter, resample, standard_channels, Recording, WindowedRecording};
use crate::error::{config, Error, Result};
use crate::tensor::Tensor;

/// Below this standard deviation a window channel is treated as constant.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    /// Ordered electrode names to keep (matched case-insensitively).
    pub channels: Vec<String>,
    pub duration_s: f64,
    pub target_rate: f64,
    pub band: (f64, f64),
    pub filter_order: usize,
    pub window: usize,
    pub stride: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            channels: standard_channels(),
            duration_s: 300.0,
            target_rate: 100.0,
            band: (1.0, 40.0),
            filter_order: 4,
            window: 500,
            stride: 250,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(config("no channels selected"));
        }
        if self.window == 0 || self.stride == 0 {
            return Err(config("window and stride must be positive"));
        }
        let total = (self.duration_s * self.target_rate).round() as usize;
        if total < self.window {
            return Err(config(format!(
                "{} s at {} Hz is shorter than one {}-sample window",
                self.duration_s, self.target_rate, self.window
            )));
        }
        Ok(())
    }

    pub fn num_windows(&self) -> usize {
        window_count((self.duration_s * self.target_rate).round() as usize, self.window, self.stride)
    }
}

/// `floor((samples - window) / stride) + 1`
pub fn window_count(samples: usize, window: usize, stride: usize) -> usize {
    if samples < window {
        0
    } else {
        (samples - window) / stride + 1
    }
}

/// Crop, select channels, resample, band-pass, window and z-normalize.
pub fn preprocess(rec: &Recording, cfg: &PreprocessConfig) -> Result<WindowedRecording> {
    cfg.validate()?;
    rec.validate()?;
    if rec.duration_s() + 1e-9 < cfg.duration_s {
        return Err(Error::Ingest(format!(
            "{}: recording lasts {:.1} s, need at least {:.1} s",
            rec.id,
            rec.duration_s(),
            cfg.duration_s
        )));
    }
    let mut selected = Vec::with_capacity(cfg.channels.len());
    let mut missing = Vec::new();
    for name in &cfg.channels {
        match rec.channel_names.iter().position(|c| c.eq_ignore_ascii_case(name)) {
            Some(i) => selected.push(i),
            None => missing.push(name.as_str()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Ingest(format!(
            "{}: missing {} of {} channels: {}",
            rec.id,
            missing.len(),
            cfg.channels.len(),
            missing.join(", ")
        )));
    }

    let native = (cfg.duration_s * rec.sample_rate).round() as usize;
    let target = (cfg.duration_s * cfg.target_rate).round() as usize;
    let sos = filter::butter_bandpass(cfg.filter_order, cfg.band.0, cfg.band.1, cfg.target_rate)?;

    let channels: Vec<Vec<f64>> = selected
        .iter()
        .map(|&c| -> Result<Vec<f64>> {
            let raw: Vec<f64> = rec.samples[c][..native].iter().map(|&v| v as f64).collect();
            let mut x = resample::resample(&raw, rec.sample_rate, cfg.target_rate)?;
            x.resize(target, 0.0);
            Ok(filter::sosfiltfilt(&sos, &x))
        })
        .collect::<Result<_>>()?;

    let n_win = window_count(target, cfg.window, cfg.stride);
    let n_ch = channels.len();
    let mut data = Vec::with_capacity(n_win * n_ch * cfg.window);
    for w in 0..n_win {
        let start = w * cfg.stride;
        for ch in &channels {
            let seg = &ch[start..start + cfg.window];
            let mean = seg.iter().sum::<f64>() / seg.len() as f64;
            let std = (seg.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / seg.len() as f64).sqrt();
            if std < STD_FLOOR {
                data.extend(std::iter::repeat_n(0.0f32, seg.len()));
            } else {
                data.extend(seg.iter().map(|v| ((v - mean) / std) as f32));
            }
        }
    }
    Ok(WindowedRecording {
        id: rec.id.clone(),
        windows: Tensor::new([n_win, n_ch, cfg.window], data)?,
        stride: cfg.stride,
        label: rec.label,
        subject: rec.subject.clone(),
    })
}
