//! Butterworth filters as cascaded biquads, applied forward-backward.

use std::f64::consts::PI;

use crate::error::{config, Result};

/// One second-order section, `[b0, b1, b2, a1, a2]` with `a0 = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Transposed direct form II state for a unit step steady state.
    fn step_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        let z2 = self.b[2] - self.a[1] * g;
        [g - self.b[0], z2]
    }

    /// Magnitude response at `freq` Hz.
    pub fn magnitude(&self, freq: f64, rate: f64) -> f64 {
        let w = 2.0 * PI * freq / rate;
        let (c1, s1, c2, s2) = (w.cos(), -w.sin(), (2.0 * w).cos(), -(2.0 * w).sin());
        let num = (self.b[0] + self.b[1] * c1 + self.b[2] * c2, self.b[1] * s1 + self.b[2] * s2);
        let den = (1.0 + self.a[0] * c1 + self.a[1] * c2, self.a[0] * s1 + self.a[1] * s2);
        (num.0.hypot(num.1)) / (den.0.hypot(den.1))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Lowpass,
    Highpass,
}

fn butter(order: usize, cutoff: f64, rate: f64, kind: Kind) -> Result<Vec<Biquad>> {
    if order == 0 || order % 2 != 0 {
        return Err(config(format!("filter order must be even and positive, got {order}")));
    }
    if !(cutoff > 0.0 && cutoff < rate / 2.0) {
        return Err(config(format!("cutoff {cutoff} Hz outside (0, {}) Hz", rate / 2.0)));
    }
    let k = (PI * cutoff / rate).tan();
    let sections = (1..=order / 2)
        .map(|i| {
            let q = 1.0 / (2.0 * (PI * (2 * i - 1) as f64 / (2 * order) as f64).sin());
            let norm = 1.0 / (1.0 + k / q + k * k);
            let a = [2.0 * (k * k - 1.0) * norm, (1.0 - k / q + k * k) * norm];
            let b = match kind {
                Kind::Lowpass => {
                    let b0 = k * k * norm;
                    [b0, 2.0 * b0, b0]
                }
                Kind::Highpass => [norm, -2.0 * norm, norm],
            };
            Biquad { b, a }
        })
        .collect();
    Ok(sections)
}

/// Band-pass as a highpass at `low` cascaded with a lowpass at `high`, each of `order`.
pub fn butter_bandpass(order: usize, low: f64, high: f64, rate: f64) -> Result<Vec<Biquad>> {
    if low >= high {
        return Err(config(format!("band edges out of order: {low} >= {high}")));
    }
    let mut sos = butter(order, low, rate, Kind::Highpass)?;
    sos.extend(butter(order, high, rate, Kind::Lowpass)?);
    Ok(sos)
}

pub fn butter_lowpass(order: usize, cutoff: f64, rate: f64) -> Result<Vec<Biquad>> {
    butter(order, cutoff, rate, Kind::Lowpass)
}

fn sosfilt(sos: &[Biquad], x: &mut [f64], mut state: Vec<[f64; 2]>) {
    for v in x.iter_mut() {
        let mut s = *v;
        for (sec, z) in sos.iter().zip(state.iter_mut()) {
            let y = sec.b[0] * s + z[0];
            z[0] = sec.b[1] * s - sec.a[0] * y + z[1];
            z[1] = sec.b[2] * s - sec.a[1] * y;
            s = y;
        }
        *v = s;
    }
}

/// Per-section initial state for a unit step, chained through section DC gains.
fn sosfilt_zi(sos: &[Biquad]) -> Vec<[f64; 2]> {
    let mut scale = 1.0;
    sos.iter()
        .map(|s| {
            let z = s.step_state();
            let out = [z[0] * scale, z[1] * scale];
            scale *= s.dc_gain();
            out
        })
        .collect()
}

/// Zero-phase filtering: odd-extended edges, forward pass, backward pass.
pub fn sosfiltfilt(sos: &[Biquad], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let pad = (3 * (2 * sos.len() + 1)).min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

    let zi = sosfilt_zi(sos);
    let scaled = |c: f64| zi.iter().map(|z| [z[0] * c, z[1] * c]).collect::<Vec<_>>();

    let x0 = ext[0];
    sosfilt(sos, &mut ext, scaled(x0));
    ext.reverse();
    let y0 = ext[0];
    sosfilt(sos, &mut ext, scaled(y0));
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, rate: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * freq * i as f64 / rate).sin()).collect()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn butterworth_is_minus_3db_at_cutoff() {
        let sos = butter_lowpass(4, 20.0, 100.0).unwrap();
        let mag: f64 = sos.iter().map(|s| s.magnitude(20.0, 100.0)).product();
        assert!((mag - 0.5f64.sqrt()).abs() < 1e-9, "{mag}");
        let dc: f64 = sos.iter().map(|s| s.magnitude(0.0, 100.0)).product();
        assert!((dc - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_phase_pass_band_and_stop_band() {
        let rate = 100.0;
        let sos = butter_bandpass(4, 1.0, 40.0, rate).unwrap();
        let n = 6000;
        let mid = 1000..5000;
        for f in [5.0, 10.0, 20.0, 35.0] {
            let y = sosfiltfilt(&sos, &tone(f, rate, n));
            let db = 20.0 * (rms(&y[mid.clone()]) / rms(&tone(f, rate, n)[mid.clone()])).log10();
            assert!(db.abs() < 1.0, "{f} Hz: {db} dB");
        }
        for f in [0.2, 49.0] {
            let y = sosfiltfilt(&sos, &tone(f, rate, n));
            let db = 20.0 * (rms(&y[mid.clone()]) / rms(&tone(f, rate, n)[mid.clone()])).log10();
            assert!(db < -20.0, "{f} Hz: {db} dB");
        }
    }

    #[test]
    fn zero_phase_has_no_lag() {
        let rate = 100.0;
        let sos = butter_bandpass(4, 1.0, 40.0, rate).unwrap();
        let x = tone(10.0, rate, 4000);
        let y = sosfiltfilt(&sos, &x);
        let corr: f64 = x[1000..3000].iter().zip(&y[1000..3000]).map(|(a, b)| a * b).sum();
        let norm = (x[1000..3000].iter().map(|v| v * v).sum::<f64>() * y[1000..3000].iter().map(|v| v * v).sum::<f64>()).sqrt();
        assert!(corr / norm > 0.999);
    }

    #[test]
    fn constant_input_is_removed() {
        let sos = butter_bandpass(4, 1.0, 40.0, 100.0).unwrap();
        let y = sosfiltfilt(&sos, &vec![50.0; 3000]);
        assert!(y.iter().all(|v| v.abs() < 1e-9), "{:?}", &y[..4]);
    }

    #[test]
    fn rejects_bad_design() {
        assert!(butter_lowpass(3, 10.0, 100.0).is_err());
        assert!(butter_lowpass(4, 60.0, 100.0).is_err());
        assert!(butter_bandpass(4, 40.0, 1.0, 100.0).is_err());
    }
}
