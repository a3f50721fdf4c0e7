//! Polyphase rational resampling with a Kaiser-windowed sinc anti-alias filter.

use std::f64::consts::PI;

use crate::error::{config, Result};

const KAISER_BETA: f64 = 5.0;
const TAPS_PER_PHASE: usize = 10;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Reduced `(up, down)` factors for `from → to` Hz (rates resolved to 1 mHz).
pub fn ratio(from: f64, to: f64) -> Result<(usize, usize)> {
    if !(from > 0.0 && to > 0.0) {
        return Err(config(format!("resample rates must be positive: {from} -> {to}")));
    }
    let (f, t) = ((from * 1000.0).round() as u64, (to * 1000.0).round() as u64);
    if ((from * 1000.0) - f as f64).abs() > 1e-6 || ((to * 1000.0) - t as f64).abs() > 1e-6 {
        return Err(config(format!("rates {from} / {to} are not multiples of 1 mHz")));
    }
    let g = gcd(f, t);
    Ok(((t / g) as usize, (f / g) as usize))
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Lowpass prototype at `1/max(up, down)` of Nyquist, unit DC gain times `up`.
fn design(up: usize, down: usize) -> Vec<f64> {
    let m = up.max(down);
    let half = TAPS_PER_PHASE * m;
    let len = 2 * half + 1;
    let cutoff = 1.0 / m as f64;
    let i0b = bessel_i0(KAISER_BETA);
    let mut h: Vec<f64> = (0..len)
        .map(|n| {
            let t = n as f64 - half as f64;
            let sinc = if t == 0.0 { 1.0 } else { (PI * cutoff * t).sin() / (PI * cutoff * t) };
            let r = 2.0 * n as f64 / (len - 1) as f64 - 1.0;
            let w = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / i0b;
            cutoff * sinc * w
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v *= up as f64 / sum);
    h
}

/// Resample `x` from `from` Hz to `to` Hz; output length `ceil(len·up/down)`.
pub fn resample(x: &[f64], from: f64, to: f64) -> Result<Vec<f64>> {
    let (up, down) = ratio(from, to)?;
    if up == down {
        return Ok(x.to_vec());
    }
    let h = design(up, down);
    let half = (h.len() - 1) / 2;
    let n_out = (x.len() * up).div_ceil(down);
    let mut y = Vec::with_capacity(n_out);
    for m in 0..n_out {
        // position in the zero-stuffed, filtered sequence
        let j = m * down + half;
        let i_hi = (j / up).min(x.len().saturating_sub(1));
        let i_lo = (j + 1).saturating_sub(h.len()).div_ceil(up);
        let mut acc = 0.0;
        for i in i_lo..=i_hi {
            let k = j - i * up;
            if k < h.len() {
                acc += x[i] * h[k];
            }
        }
        y.push(acc);
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_reduces() {
        assert_eq!(ratio(200.0, 100.0).unwrap(), (1, 2));
        assert_eq!(ratio(256.0, 100.0).unwrap(), (25, 64));
        assert_eq!(ratio(250.0, 100.0).unwrap(), (2, 5));
    }

    #[test]
    fn identity_when_rates_match() {
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        assert_eq!(resample(&x, 100.0, 100.0).unwrap(), x);
    }

    #[test]
    fn downsample_preserves_in_band_tone_and_rejects_alias() {
        let from = 256.0;
        let n = 256 * 20;
        let tone = |f: f64| -> Vec<f64> { (0..n).map(|i| (2.0 * PI * f * i as f64 / from).sin()).collect() };
        let rms = |v: &[f64]| (v.iter().map(|a| a * a).sum::<f64>() / v.len() as f64).sqrt();

        let y = resample(&tone(10.0), from, 100.0).unwrap();
        assert_eq!(y.len(), 2000);
        let core = &y[200..1800];
        assert!((rms(core) - 0.5f64.sqrt()).abs() < 0.01, "{}", rms(core));
        // phase: compare with the ideal tone at the new rate
        let ideal: Vec<f64> = (200..1800).map(|i| (2.0 * PI * 10.0 * i as f64 / 100.0).sin()).collect();
        let err: f64 = core.iter().zip(&ideal).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 0.02, "{err}");

        // 70 Hz would alias to 30 Hz at 100 Hz
        let y = resample(&tone(70.0), from, 100.0).unwrap();
        assert!(rms(&y[200..1800]) < 0.01);
    }
}
