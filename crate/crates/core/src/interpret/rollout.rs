use nalgebra::DMatrix;

use crate::error::{contract, Result};
use crate::nn::{TokenGrid, Tubelet};
use crate::tensor::{Scalar, Tensor};

/// Mean over heads of a `[heads, n, n]` attention tensor.
pub fn head_average<T: Scalar>(attention: &Tensor<T>) -> Result<DMatrix<f64>> {
    let &[heads, n, m] = attention.shape() else {
        return Err(contract(format!("expected [heads, n, n] attention, got {:?}", attention.shape())));
    };
    if n != m || heads == 0 {
        return Err(contract(format!("attention must be square, got {:?}", attention.shape())));
    }
    let d = attention.data();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        (0..heads).map(|h| d[(h * n + i) * n + j].as_f64()).sum::<f64>() / heads as f64
    }))
}

/// `A + I`, then each row divided by its sum.
pub fn residual_normalize(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(contract(format!("attention must be square, got {}×{}", a.nrows(), a.ncols())));
    }
    let mut out = a + DMatrix::identity(a.nrows(), a.ncols());
    for mut row in out.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    Ok(out)
}

/// Product of the residual-normalized layers, first layer leftmost.
pub fn attention_rollout(stack: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let first = stack.first().ok_or_else(|| contract("rollout needs at least one layer"))?;
    let n = first.nrows();
    let mut out: Option<DMatrix<f64>> = None;
    for (l, a) in stack.iter().enumerate() {
        if a.nrows() != n || a.ncols() != n {
            return Err(contract(format!(
                "layer {l} attention is {}×{}, expected {n}×{n}",
                a.nrows(),
                a.ncols()
            )));
        }
        let t = residual_normalize(a)?;
        out = Some(match out {
            None => t,
            Some(acc) => acc * t,
        });
    }
    Ok(out.expect("non-empty stack"))
}

/// Rollout mass projected onto the channel × time plane.
#[derive(Clone, Debug)]
pub struct Heatmap {
    /// `[channel cells, time cells]`.
    pub cells: DMatrix<f64>,
    /// Nearest-neighbour upsampled to `[channels, samples]`.
    pub upsampled: DMatrix<f64>,
}

/// Column mass of the rollout averaged over query tokens, then over the
/// temporal grid.
pub fn rollout_heatmap(rollout: &DMatrix<f64>, grid: TokenGrid, tubelet: Tubelet) -> Result<Heatmap> {
    if rollout.nrows() != grid.len() || rollout.ncols() != grid.len() {
        return Err(contract(format!(
            "rollout is {}×{} but the grid has {} tokens",
            rollout.nrows(),
            rollout.ncols(),
            grid.len()
        )));
    }
    let n = grid.len() as f64;
    let mass: Vec<f64> = rollout.column_iter().map(|c| c.sum() / n).collect();
    mass_heatmap(&mass, grid, tubelet)
}

/// Rollout seen from an external query: its attention over the tokens,
/// `[heads, queries, n]` as produced by the probe head, averaged over heads
/// and queries and pushed through the encoder rollout.
pub fn query_rollout<T: Scalar>(rollout: &DMatrix<f64>, query_attention: &Tensor<T>) -> Result<Vec<f64>> {
    let &[heads, queries, n] = query_attention.shape() else {
        return Err(contract(format!("expected [heads, queries, n] attention, got {:?}", query_attention.shape())));
    };
    if n != rollout.nrows() || !rollout.is_square() || heads * queries == 0 {
        return Err(contract(format!(
            "query attention over {n} tokens does not match a {}×{} rollout",
            rollout.nrows(),
            rollout.ncols()
        )));
    }
    let mut w = vec![0.0; n];
    for row in query_attention.data().chunks(n) {
        w.iter_mut().zip(row).for_each(|(a, v)| *a += v.as_f64() / (heads * queries) as f64);
    }
    Ok((0..n).map(|j| (0..n).map(|i| w[i] * rollout[(i, j)]).sum()).collect())
}

/// Per-token mass averaged over the temporal grid and upsampled.
pub fn mass_heatmap(mass: &[f64], grid: TokenGrid, tubelet: Tubelet) -> Result<Heatmap> {
    if mass.len() != grid.len() {
        return Err(contract(format!("{} token masses for a grid of {}", mass.len(), grid.len())));
    }
    let cells = DMatrix::from_fn(grid.channel, grid.time, |c, w| {
        (0..grid.temporal).map(|t| mass[grid.index(t, c, w)]).sum::<f64>() / grid.temporal as f64
    });
    let upsampled = DMatrix::from_fn(grid.channel * tubelet.channels, grid.time * tubelet.samples, |i, j| {
        cells[(i / tubelet.channels, j / tubelet.samples)]
    });
    Ok(Heatmap { cells, upsampled })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_attention_rolls_out_to_identity() {
        let r = attention_rollout(&[DMatrix::identity(3, 3)]).unwrap();
        assert_eq!(r, DMatrix::identity(3, 3));
    }

    #[test]
    fn hand_case() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let r = attention_rollout(&[a]).unwrap();
        assert_eq!(r, DMatrix::from_row_slice(2, 2, &[0.75, 0.25, 0.25, 0.75]));
    }

    #[test]
    fn non_square_is_an_error() {
        assert!(attention_rollout(&[DMatrix::zeros(2, 3)]).is_err());
        assert!(attention_rollout(&[DMatrix::identity(2, 2), DMatrix::identity(3, 3)]).is_err());
        assert!(attention_rollout(&[]).is_err());
        assert!(head_average(&Tensor::<f64>::zeros([1, 2, 3])).is_err());
    }

    #[test]
    fn heads_are_averaged() {
        let t = Tensor::<f64>::new([2, 2, 2], vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(head_average(&t).unwrap(), DMatrix::from_element(2, 2, 0.5));
    }

    #[test]
    fn query_rollout_with_identity_encoder_is_the_query_weights() {
        let r = DMatrix::identity(3, 3);
        let w = Tensor::<f64>::new([2, 1, 3], vec![0.2, 0.3, 0.5, 0.4, 0.5, 0.1]).unwrap();
        let m = query_rollout(&r, &w).unwrap();
        for (a, b) in m.iter().zip([0.3, 0.4, 0.3]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(query_rollout(&DMatrix::identity(2, 2), &w).is_err());
    }

    #[test]
    fn heatmap_averages_over_queries_and_temporal_index() {
        let grid = TokenGrid { temporal: 2, channel: 1, time: 2 };
        // every query attends fully to token (t=1, c=0, w=1)
        let r = DMatrix::from_fn(4, 4, |_, j| if j == 3 { 1.0 } else { 0.0 });
        let h = rollout_heatmap(&r, grid, Tubelet::new(2, 3, 1)).unwrap();
        assert_eq!(h.cells, DMatrix::from_row_slice(1, 2, &[0.0, 0.5]));
        assert_eq!(h.upsampled.shape(), (2, 6));
        assert_eq!(h.upsampled[(1, 2)], 0.0);
        assert_eq!(h.upsampled[(1, 3)], 0.5);
    }
}
