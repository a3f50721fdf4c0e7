//! Seeded synthetic EEG: band-limited oscillators plus 1/f background.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{standard_channels, Label, Recording, Sex, Subject};
use crate::error::{config, Result};

/// Target share of 1–40 Hz power in each band; the shares sum to one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandProfile {
    pub delta: f64,
    pub theta: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

pub const NORMAL_PROFILE: BandProfile = BandProfile {
    delta: 0.18,
    theta: 0.14,
    alpha: 0.32,
    beta: 0.278,
    gamma: 0.082,
};

/// Slowed spectrum: delta widened and dominant, beta suppressed.
pub const ABNORMAL_PROFILE: BandProfile = BandProfile {
    delta: 0.45,
    theta: 0.22,
    alpha: 0.18,
    beta: 0.115,
    gamma: 0.035,
};

/// Band edges in Hz, matching the analysis bands.
const EDGES: [(f64, f64); 5] = [(1.0, 4.0), (4.0, 8.0), (8.0, 13.0), (13.0, 30.0), (30.0, 40.0)];
/// Oscillators are kept this far from band edges so spectral leakage stays in-band.
const EDGE_MARGIN: f64 = 0.75;
const NOISE_COMPONENTS: usize = 32;
const ENVELOPE_DEPTH: f64 = 0.5;

impl BandProfile {
    pub fn shares(&self) -> [f64; 5] {
        [self.delta, self.theta, self.alpha, self.beta, self.gamma]
    }

    fn from_shares(s: [f64; 5]) -> Self {
        Self {
            delta: s[0],
            theta: s[1],
            alpha: s[2],
            beta: s[3],
            gamma: s[4],
        }
    }

    fn mix(&self, other: &Self, t: f64) -> Self {
        let (a, b) = (self.shares(), other.shares());
        Self::from_shares(std::array::from_fn(|i| a[i] * (1.0 - t) + b[i] * t))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_recordings: usize,
    /// Fraction of recordings labelled abnormal.
    pub abnormal_fraction: f64,
    pub seed: u64,
    pub sample_rate: f64,
    pub duration_s: f64,
    pub rms_uv: f64,
    /// Log-normal spread of per-recording band shares.
    pub jitter: f64,
    /// Share of 1–40 Hz power carried by the 1/f background.
    pub noise_fraction: f64,
    /// Confine the class difference to the first four channels.
    pub focal_channels: bool,
    pub channels: Vec<String>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_recordings: 10,
            abnormal_fraction: 0.5,
            seed: 0,
            sample_rate: 200.0,
            duration_s: 300.0,
            rms_uv: 20.0,
            jitter: 0.1,
            noise_fraction: 0.1,
            focal_channels: false,
            channels: standard_channels(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_recordings == 0 {
            return Err(config("n_recordings must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.abnormal_fraction) {
            return Err(config("abnormal_fraction outside [0, 1]"));
        }
        if !(self.sample_rate >= 2.0 * EDGES[4].1 + 1.0) {
            return Err(config(format!("sample rate {} too low for a 40 Hz band", self.sample_rate)));
        }
        if !(self.duration_s > 0.0 && self.rms_uv > 0.0 && self.jitter >= 0.0) {
            return Err(config("duration, rms and jitter must be positive"));
        }
        if !(0.0..1.0).contains(&self.noise_fraction) {
            return Err(config("noise_fraction outside [0, 1)"));
        }
        if self.channels.is_empty() || (self.focal_channels && self.channels.len() <= 4) {
            return Err(config("too few channels"));
        }
        Ok(())
    }
}

/// Share of each band under a 1/f spectrum on 1–40 Hz.
fn pink_shares() -> [f64; 5] {
    let total = (EDGES[4].1 / EDGES[0].0).ln();
    std::array::from_fn(|i| (EDGES[i].1 / EDGES[i].0).ln() / total)
}

struct Oscillator {
    freq: f64,
    amp: f64,
    envelope: Option<(f64, f64)>,
}

/// Sum of sinusoids via phasor rotation, with periodic renormalization.
fn render(oscs: &[Oscillator], rate: f64, n: usize, phases: &mut impl FnMut() -> f64, out: &mut [f64]) {
    let env_norm = (1.0 + ENVELOPE_DEPTH * ENVELOPE_DEPTH / 2.0).sqrt();
    for o in oscs {
        let (mut re, mut im) = {
            let p = phases();
            (p.cos(), p.sin())
        };
        let w = 2.0 * PI * o.freq / rate;
        let (cr, ci) = (w.cos(), w.sin());
        // envelope phasor (er, ei), also advanced by rotation
        let (mut er, mut ei, ecr, eci) = match o.envelope {
            Some((f, p)) => {
                let we = 2.0 * PI * f / rate;
                (p.cos(), p.sin(), we.cos(), we.sin())
            }
            None => (1.0, 0.0, 1.0, 0.0),
        };
        let depth = if o.envelope.is_some() { ENVELOPE_DEPTH } else { 0.0 };
        let amp = if o.envelope.is_some() { o.amp / env_norm } else { o.amp };
        for (i, v) in out.iter_mut().enumerate().take(n) {
            *v += amp * (1.0 + depth * ei) * im;
            let nre = re * cr - im * ci;
            im = re * ci + im * cr;
            re = nre;
            let ner = er * ecr - ei * eci;
            ei = er * eci + ei * ecr;
            er = ner;
            if i % 1024 == 1023 {
                let r = re.hypot(im);
                re /= r;
                im /= r;
                let r = er.hypot(ei);
                er /= r;
                ei /= r;
            }
        }
    }
}

fn oscillators_per_band(label: Label) -> [usize; 5] {
    match label {
        Label::Normal => [3, 3, 3, 3, 3],
        Label::Abnormal => [5, 3, 3, 3, 3],
    }
}

fn band_oscillators<R: Rng>(profile: &BandProfile, counts: [usize; 5], power: f64, rng: &mut R) -> Vec<Oscillator> {
    let mut out = Vec::new();
    for (b, share) in profile.shares().into_iter().enumerate() {
        let (lo, hi) = (EDGES[b].0 + EDGE_MARGIN, EDGES[b].1 - EDGE_MARGIN);
        let each = power * share / counts[b] as f64;
        for _ in 0..counts[b] {
            out.push(Oscillator {
                freq: rng.random_range(lo..hi),
                amp: (2.0 * each).sqrt(),
                envelope: Some((rng.random_range(0.05..0.3), rng.random_range(0.0..2.0 * PI))),
            });
        }
    }
    out
}

fn noise_oscillators<R: Rng>(power: f64, rng: &mut R) -> Vec<Oscillator> {
    let (lo, hi) = (EDGES[0].0.ln(), EDGES[4].1.ln());
    let each = power / NOISE_COMPONENTS as f64;
    (0..NOISE_COMPONENTS)
        .map(|_| Oscillator {
            freq: rng.random_range(lo..hi).exp(),
            amp: (2.0 * each).sqrt(),
            envelope: None,
        })
        .collect()
}

/// Oscillator shares that, together with the background, hit `target`.
fn oscillator_profile(target: &BandProfile, noise_fraction: f64) -> BandProfile {
    let pink = pink_shares();
    let t = target.shares();
    let raw: [f64; 5] = std::array::from_fn(|i| ((t[i] - noise_fraction * pink[i]) / (1.0 - noise_fraction)).max(0.0));
    let sum: f64 = raw.iter().sum();
    BandProfile::from_shares(raw.map(|v| v / sum))
}

fn jittered<R: Rng>(p: &BandProfile, jitter: f64, rng: &mut R) -> BandProfile {
    if jitter == 0.0 {
        return *p;
    }
    let s = p.shares().map(|v| {
        let z: f64 = StandardNormal.sample(rng);
        v * (jitter * z).exp()
    });
    let sum: f64 = s.iter().sum();
    BandProfile::from_shares(s.map(|v| v / sum))
}

fn generate_one(cfg: &SynthConfig, index: usize, label: Label, seed: u64) -> Recording {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (cfg.duration_s * cfg.sample_rate).round() as usize;
    let power = cfg.rms_uv * cfg.rms_uv;
    let class = match label {
        Label::Normal => NORMAL_PROFILE,
        Label::Abnormal => ABNORMAL_PROFILE,
    };
    let neutral = NORMAL_PROFILE.mix(&ABNORMAL_PROFILE, 0.5);
    let class_profile = jittered(&class, cfg.jitter, &mut rng);
    let neutral_profile = jittered(&neutral, cfg.jitter, &mut rng);

    let osc_power = power * (1.0 - cfg.noise_fraction);
    let focal = band_oscillators(
        &oscillator_profile(&class_profile, cfg.noise_fraction),
        oscillators_per_band(label),
        osc_power,
        &mut rng,
    );
    let background = band_oscillators(
        &oscillator_profile(&neutral_profile, cfg.noise_fraction),
        [3; 5],
        osc_power,
        &mut rng,
    );

    let mut gains: Vec<f64> = (0..cfg.channels.len()).map(|_| rng.random_range(0.7..1.3)).collect();
    let mean_sq = gains.iter().map(|g| g * g).sum::<f64>() / gains.len() as f64;
    gains.iter_mut().for_each(|g| *g /= mean_sq.sqrt());

    let mut buf = vec![0.0f64; n];
    let samples = gains
        .iter()
        .enumerate()
        .map(|(c, &gain)| {
            buf.iter_mut().for_each(|v| *v = 0.0);
            let oscs = if cfg.focal_channels && c >= 4 { &background } else { &focal };
            let mut phase = || rng.random_range(0.0..2.0 * PI);
            render(oscs, cfg.sample_rate, n, &mut phase, &mut buf);
            let noise = noise_oscillators(power * cfg.noise_fraction, &mut rng);
            let mut phase = || rng.random_range(0.0..2.0 * PI);
            render(&noise, cfg.sample_rate, n, &mut phase, &mut buf);
            buf.iter().map(|v| (v * gain) as f32).collect()
        })
        .collect();

    let age = match label {
        Label::Normal => rng.random_range(20.0..60.0f32),
        Label::Abnormal => rng.random_range(40.0..85.0f32),
    };
    let sex = if rng.random_bool(0.5) { Sex::Female } else { Sex::Male };
    Recording {
        id: format!("synth-{index:05}"),
        channel_names: cfg.channels.clone(),
        sample_rate: cfg.sample_rate,
        samples,
        label: Some(label),
        subject: Subject {
            id: Some(format!("subj-{index:05}")),
            age: Some(age.round()),
            sex: Some(sex),
        },
    }
}

/// Generate `cfg.n_recordings` labelled recordings; bit-identical for a fixed config.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<Recording>> {
    cfg.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_abnormal = (cfg.n_recordings as f64 * cfg.abnormal_fraction).round() as usize;
    let mut labels: Vec<Label> = (0..cfg.n_recordings)
        .map(|i| if i < n_abnormal { Label::Abnormal } else { Label::Normal })
        .collect();
    labels.shuffle(&mut master);
    let seeds: Vec<u64> = (0..cfg.n_recordings).map(|_| master.next_u64()).collect();
    Ok(labels
        .into_iter()
        .zip(seeds)
        .enumerate()
        .map(|(i, (label, seed))| generate_one(cfg, i, label, seed))
        .collect())
}
