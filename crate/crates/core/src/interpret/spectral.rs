use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{contract, Result};

/// One-sided power spectral density.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub freqs: Vec<f64>,
    pub psd: Vec<f64>,
}

impl Spectrum {
    pub fn resolution(&self) -> f64 {
        self.freqs.get(1).copied().unwrap_or(0.0)
    }
}

/// Welch's method: Hann-windowed segments with constant detrending,
/// averaged periodograms, density scaling.
pub fn psd_welch(signal: &[f64], rate: f64, segment: usize, overlap: usize) -> Result<Spectrum> {
    if segment < 2 || overlap >= segment {
        return Err(contract(format!("invalid Welch segment {segment} / overlap {overlap}")));
    }
    if signal.len() < segment {
        return Err(contract(format!(
            "signal of {} samples is shorter than one {segment}-sample segment",
            signal.len()
        )));
    }
    if !(rate > 0.0) {
        return Err(contract(format!("sampling rate {rate} must be positive")));
    }
    // periodic Hann
    let window: Vec<f64> = (0..segment)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / segment as f64).cos())
        .collect();
    let scale = 1.0 / (rate * window.iter().map(|w| w * w).sum::<f64>());
    let fft = FftPlanner::new().plan_fft_forward(segment);
    let bins = segment / 2 + 1;
    let step = segment - overlap;
    let mut psd = vec![0.0; bins];
    let mut count = 0;
    let mut buf = vec![Complex::new(0.0, 0.0); segment];
    let mut start = 0;
    while start + segment <= signal.len() {
        let seg = &signal[start..start + segment];
        let mean = seg.iter().sum::<f64>() / segment as f64;
        for ((b, &x), &w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex::new((x - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (k, p) in psd.iter_mut().enumerate() {
            *p += buf[k].norm_sqr();
        }
        count += 1;
        start += step;
    }
    for (k, p) in psd.iter_mut().enumerate() {
        *p *= scale / count as f64;
        let edge = k == 0 || (segment % 2 == 0 && k == bins - 1);
        if !edge {
            *p *= 2.0;
        }
    }
    let freqs = (0..bins).map(|k| k as f64 * rate / segment as f64).collect();
    Ok(Spectrum { freqs, psd })
}

/// Welch with 2 s segments and 50% overlap.
pub fn psd_default(signal: &[f64], rate: f64) -> Result<Spectrum> {
    let segment = (2.0 * rate).round() as usize;
    psd_welch(signal, rate, segment, segment / 2)
}

pub const BAND_NAMES: [&str; 5] = ["delta", "theta", "alpha", "beta", "gamma"];
/// Half-open bands in Hz; the last one includes 40 Hz.
pub const BAND_EDGES: [(f64, f64); 5] = [(1.0, 4.0), (4.0, 8.0), (8.0, 13.0), (13.0, 30.0), (30.0, 40.0)];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct BandPower {
    pub delta: f64,
    pub theta: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl BandPower {
    pub fn as_array(&self) -> [f64; 5] {
        [self.delta, self.theta, self.alpha, self.beta, self.gamma]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self {
            delta: a[0],
            theta: a[1],
            alpha: a[2],
            beta: a[3],
            gamma: a[4],
        }
    }

    pub fn mean(items: &[BandPower]) -> Self {
        let mut acc = [0.0; 5];
        for b in items {
            acc.iter_mut().zip(b.as_array()).for_each(|(a, v)| *a += v);
        }
        Self::from_array(acc.map(|a| a / items.len().max(1) as f64))
    }
}

fn band_of(f: f64) -> Option<usize> {
    if f == BAND_EDGES[4].1 {
        return Some(4);
    }
    BAND_EDGES.iter().position(|&(lo, hi)| f >= lo && f < hi)
}

/// Power in each band over the 1–40 Hz total. All zeros if that total is zero.
pub fn relative_band_power(spectrum: &Spectrum) -> BandPower {
    let mut acc = [0.0; 5];
    for (&f, &p) in spectrum.freqs.iter().zip(&spectrum.psd) {
        if let Some(b) = band_of(f) {
            acc[b] += p;
        }
    }
    let total: f64 = acc.iter().sum();
    if total <= 0.0 {
        return BandPower::default();
    }
    BandPower::from_array(acc.map(|a| a / total))
}
