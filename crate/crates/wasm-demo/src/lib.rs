//! Browser bindings for three small views of the pipeline: a mask preview,
//! a Welch spectrum with relative band power, and an attention-rollout
//! heatmap. Everything also runs natively, which is how it is tested.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

use eeg_jepa::interpret::{attention_rollout, head_average, psd_default, relative_band_power, rollout_heatmap};
use eeg_jepa::model::{sample_mask, JepaConfig, JepaModel, MaskConfig};
use eeg_jepa::signal::{preprocess, sample_clip, synth_generate, ClipConfig, PreprocessConfig, SynthConfig};
use eeg_jepa::tensor::Graph;
use eeg_jepa::train::decode_checkpoint;
use eeg_jepa::Result;

fn js_err(e: eeg_jepa::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// A row-major grid of values for drawing.
#[wasm_bindgen]
pub struct Grid {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    summary: f64,
}

#[wasm_bindgen]
impl Grid {
    #[wasm_bindgen(getter)]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[wasm_bindgen(getter)]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[wasm_bindgen(getter)]
    pub fn values(&self) -> Vec<f64> {
        self.values.clone()
    }

    /// Masked fraction for masks, number of layers for rollouts.
    #[wasm_bindgen(getter)]
    pub fn summary(&self) -> f64 {
        self.summary
    }
}

/// One multi-block mask on the channel × time token plane of the tiny
/// preset; 1 marks a masked cell. The same plane repeats at every temporal index.
pub fn mask_grid(seed: u64, num_blocks: usize, scale_min: f64, scale_max: f64) -> Result<Grid> {
    let grid = JepaConfig::tiny().grid()?;
    let cfg = MaskConfig {
        num_blocks,
        spatial_scale: (scale_min, scale_max),
        ..MaskConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = sample_mask(grid, &cfg, &mut rng)?;
    let mut values = vec![0.0; grid.plane()];
    for &i in mask.masked.iter().take_while(|&&i| i < grid.plane()) {
        values[i] = 1.0;
    }
    Ok(Grid {
        rows: grid.channel,
        cols: grid.time,
        values,
        summary: mask.masked_fraction(),
    })
}

#[wasm_bindgen]
pub struct SpectrumView {
    freqs: Vec<f64>,
    psd: Vec<f64>,
    bands: Vec<f64>,
}

#[wasm_bindgen]
impl SpectrumView {
    #[wasm_bindgen(getter)]
    pub fn freqs(&self) -> Vec<f64> {
        self.freqs.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn psd(&self) -> Vec<f64> {
        self.psd.clone()
    }

    /// Relative power: delta, theta, alpha, beta, gamma.
    #[wasm_bindgen(getter)]
    pub fn bands(&self) -> Vec<f64> {
        self.bands.clone()
    }
}

/// Welch spectrum of one synthetic channel of the chosen class.
pub fn spectrum(abnormal: bool, seed: u64, duration_s: f64) -> Result<SpectrumView> {
    let cfg = SynthConfig {
        n_recordings: 1,
        abnormal_fraction: if abnormal { 1.0 } else { 0.0 },
        seed,
        duration_s,
        channels: vec!["Cz".into()],
        ..SynthConfig::default()
    };
    let rec = synth_generate(&cfg)?.remove(0);
    let x: Vec<f64> = rec.samples[0].iter().map(|&v| v as f64).collect();
    let s = psd_default(&x, rec.sample_rate)?;
    let keep = s.freqs.iter().take_while(|&&f| f <= 50.0).count();
    Ok(SpectrumView {
        bands: relative_band_power(&s).as_array().to_vec(),
        freqs: s.freqs[..keep].to_vec(),
        psd: s.psd[..keep].to_vec(),
    })
}

/// Rollout heatmap (channel cells × time cells) of one synthetic clip.
/// With checkpoint bytes the trained context encoder is used, otherwise a
/// randomly initialised tiny model.
pub fn rollout_grid(seed: u64, abnormal: bool, checkpoint: Option<&[u8]>) -> Result<Grid> {
    let model = match checkpoint {
        Some(bytes) => decode_checkpoint(bytes)?.model,
        None => JepaModel::new(JepaConfig::tiny(), &mut ChaCha8Rng::seed_from_u64(seed))?,
    };
    let clip_cfg = ClipConfig {
        frames: model.config.frames,
        sampling_rate: 1,
        num_clips: 1,
        tubelet: model.config.tubelet,
    };
    let pre = PreprocessConfig {
        duration_s: 60.0,
        ..PreprocessConfig::default()
    };
    let synth = SynthConfig {
        n_recordings: 1,
        abnormal_fraction: if abnormal { 1.0 } else { 0.0 },
        seed,
        duration_s: pre.duration_s,
        ..SynthConfig::default()
    };
    let rec = synth_generate(&synth)?.remove(0);
    let windows = preprocess(&rec, &pre)?;
    let clip = sample_clip(&windows, &clip_cfg, 0)?;
    let patches = model.patches(&clip.data)?;
    let mut g = Graph::no_grad();
    let enc = model.encode(&mut g, &patches)?;
    let stack = enc.attention.iter().map(head_average).collect::<Result<Vec<_>>>()?;
    let r = attention_rollout(&stack)?;
    let heat = rollout_heatmap(&r, model.grid(), model.config.tubelet)?;
    let (rows, cols) = heat.cells.shape();
    Ok(Grid {
        rows,
        cols,
        values: (0..rows * cols).map(|i| heat.cells[(i / cols, i % cols)]).collect(),
        summary: stack.len() as f64,
    })
}

#[wasm_bindgen(js_name = maskPreview)]
pub fn mask_preview(seed: u64, num_blocks: usize, scale_min: f64, scale_max: f64) -> std::result::Result<Grid, JsError> {
    mask_grid(seed, num_blocks, scale_min, scale_max).map_err(js_err)
}

#[wasm_bindgen(js_name = bandPower)]
pub fn band_power(abnormal: bool, seed: u64, duration_s: f64) -> std::result::Result<SpectrumView, JsError> {
    spectrum(abnormal, seed, duration_s).map_err(js_err)
}

#[wasm_bindgen]
pub fn rollout(seed: u64, abnormal: bool, checkpoint: Option<Vec<u8>>) -> std::result::Result<Grid, JsError> {
    rollout_grid(seed, abnormal, checkpoint.as_deref()).map_err(js_err)
}
