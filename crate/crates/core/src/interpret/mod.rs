//! Attention rollout, Welch spectra and band power, embedding export.

mod embed;
mod rollout;
mod spectral;

use std::io::Write;

use nalgebra::DMatrix;

pub use embed::{export_embeddings, project_pca, EmbeddingTable, Pca};
pub use rollout::{
    attention_rollout, head_average, mass_heatmap, query_rollout, residual_normalize, rollout_heatmap, Heatmap,
};
pub use spectral::{psd_default, psd_welch, relative_band_power, BandPower, Spectrum, BAND_EDGES, BAND_NAMES};

use crate::error::Result;

/// Binary 8-bit graymap, min–max scaled; a constant matrix maps to black.
pub fn write_pgm<W: Write>(m: &DMatrix<f64>, mut out: W) -> Result<()> {
    let lo = m.min();
    let span = m.max() - lo;
    write!(out, "P5\n{} {}\n255\n", m.ncols(), m.nrows())?;
    let bytes: Vec<u8> = m
        .row_iter()
        .flat_map(|r| r.iter().copied().collect::<Vec<_>>())
        .map(|v| if span > 0.0 { ((v - lo) / span * 255.0).round() as u8 } else { 0 })
        .collect();
    out.write_all(&bytes)?;
    Ok(())
}

/// Plain comma-separated matrix, one row per line.
pub fn write_matrix_csv<W: Write>(m: &DMatrix<f64>, mut out: W) -> Result<()> {
    for r in m.row_iter() {
        let line: Vec<String> = r.iter().map(f64::to_string).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}
