use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{contract, Result};
use crate::model::JepaModel;
use crate::signal::{clip_offsets, sample_clip_at, ClipConfig, Sex, WindowedRecording};
use crate::tensor::Graph;

/// One row per recording: mean-pooled token embedding and metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub ids: Vec<String>,
    pub labels: Vec<Option<usize>>,
    pub ages: Vec<Option<f32>>,
    pub sexes: Vec<Option<Sex>>,
    /// `[recordings, dim]`.
    pub embeddings: DMatrix<f64>,
}

/// Full-sequence encoding of each clip, averaged over tokens and clips.
pub fn export_embeddings(model: &JepaModel<f32>, data: &[WindowedRecording], clip: &ClipConfig) -> Result<EmbeddingTable> {
    if data.is_empty() {
        return Err(contract("no recordings to embed"));
    }
    let d = model.dim();
    let rows: Vec<Vec<f64>> = data
        .par_iter()
        .map(|rec| {
            let offsets = clip_offsets(rec.num_windows(), clip)?;
            let mut acc = vec![0.0; d];
            for &start in &offsets {
                let patches = model.patches(&sample_clip_at(rec, clip, start)?.data)?;
                let mut g = Graph::no_grad();
                let out = model.encode(&mut g, &patches)?;
                let tokens = g.value(out.out);
                let n = tokens.shape()[0];
                for row in tokens.data().chunks(d) {
                    acc.iter_mut().zip(row).for_each(|(a, &v)| *a += v as f64 / n as f64);
                }
            }
            Ok(acc.into_iter().map(|a| a / offsets.len() as f64).collect())
        })
        .collect::<Result<_>>()?;
    Ok(EmbeddingTable {
        ids: data.iter().map(|r| r.id.clone()).collect(),
        labels: data.iter().map(|r| r.label.map(|l| l.index())).collect(),
        ages: data.iter().map(|r| r.subject.age).collect(),
        sexes: data.iter().map(|r| r.subject.sex).collect(),
        embeddings: DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]),
    })
}

impl EmbeddingTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["id".to_string(), "label".into(), "age".into(), "sex".into()];
        header.extend((0..self.embeddings.ncols()).map(|j| format!("e{j}")));
        w.write_record(&header).map_err(csv_err)?;
        for i in 0..self.ids.len() {
            let mut rec = vec![
                self.ids[i].clone(),
                self.labels[i].map_or_else(String::new, |l| l.to_string()),
                self.ages[i].map_or_else(String::new, |a| a.to_string()),
                match self.sexes[i] {
                    Some(Sex::Male) => "male".into(),
                    Some(Sex::Female) => "female".into(),
                    None => String::new(),
                },
            ];
            rec.extend(self.embeddings.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> crate::Error {
    crate::Error::Io(std::io::Error::other(e))
}

#[derive(Clone, Debug)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `[k, dim]`, unit rows; the largest-magnitude coefficient of each is positive.
    pub components: DMatrix<f64>,
    /// Covariance eigenvalues, descending, all of them.
    pub eigenvalues: Vec<f64>,
    /// `[n, k]` projected coordinates.
    pub coords: DMatrix<f64>,
}

/// Principal components of the rows of `x` from the sample covariance.
pub fn project_pca(x: &DMatrix<f64>, k: usize) -> Result<Pca> {
    let (n, d) = x.shape();
    if n < 2 || k == 0 || k > d {
        return Err(contract(format!("PCA of {n}×{d} data to {k} components")));
    }
    let mean: Vec<f64> = x.column_iter().map(|c| c.mean()).collect();
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut components = DMatrix::zeros(k, d);
    for (r, &idx) in order.iter().take(k).enumerate() {
        let v = eig.eigenvectors.column(idx);
        let lead = v.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(1.0);
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            components[(r, j)] = sign * v[j];
        }
    }
    let coords = &centered * components.transpose();
    Ok(Pca {
        mean,
        eigenvalues: order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect(),
        components,
        coords,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn points_on_a_line() {
        let x = DMatrix::from_fn(20, 3, |i, j| i as f64 * [1.0, -2.0, 0.5][j] + 3.0);
        let p = project_pca(&x, 2).unwrap();
        assert!(p.eigenvalues[1].abs() < 1e-9);
        let c = p.components.row(0);
        // sign convention: -2 is the largest coefficient, so it flips to positive
        assert!(c[1] > 0.0);
        assert!(p.coords.column(1).iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn reconstruction_error_is_dropped_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = DMatrix::from_fn(50, 5, |_, j| rng.random_range(-1.0..1.0) * (j + 1) as f64);
        let p = project_pca(&x, 2).unwrap();
        let recon = &p.coords * &p.components;
        let mut err = 0.0;
        for i in 0..50 {
            for j in 0..5 {
                err += (x[(i, j)] - p.mean[j] - recon[(i, j)]).powi(2);
            }
        }
        let dropped: f64 = p.eigenvalues[2..].iter().sum();
        assert!((err / 49.0 - dropped).abs() < 1e-6);
    }

    #[test]
    fn bad_shapes() {
        assert!(project_pca(&DMatrix::zeros(1, 3), 1).is_err());
        assert!(project_pca(&DMatrix::zeros(4, 3), 4).is_err());
    }
}
