use super::TokenGrid;
use crate::tensor::{Scalar, Tensor};

/// Fixed 3-D sinusoidal position table, `[grid.len(), dim]`.
///
/// Each axis (temporal, channel, time) gets `2·⌊dim/6⌋` columns, concatenated
/// in that order; leftover columns are zero.
pub fn sincos_positions<T: Scalar>(grid: TokenGrid, dim: usize) -> Tensor<T> {
    let per_axis = 2 * (dim / 6);
    let half = per_axis / 2;
    let omega: Vec<f64> = (0..half)
        .map(|i| 1.0 / 10_000f64.powf(i as f64 / half.max(1) as f64))
        .collect();
    let mut data = vec![T::zero(); grid.len() * dim];
    for idx in 0..grid.len() {
        let (t, c, w) = grid.coords(idx);
        let row = &mut data[idx * dim..(idx + 1) * dim];
        for (axis, pos) in [t, c, w].into_iter().enumerate() {
            let base = axis * per_axis;
            for (i, om) in omega.iter().enumerate() {
                let angle = pos as f64 * om;
                row[base + i] = T::from_f64(angle.sin());
                row[base + half + i] = T::from_f64(angle.cos());
            }
        }
    }
    Tensor::new([grid.len(), dim], data).expect("table shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    const GRID: TokenGrid = TokenGrid {
        temporal: 4,
        channel: 3,
        time: 5,
    };

    #[test]
    fn temporal_neighbours_differ_only_in_temporal_block() {
        let d = 32;
        let table = sincos_positions::<f64>(GRID, d);
        let a = table.row(GRID.index(0, 1, 2));
        let b = table.row(GRID.index(3, 1, 2));
        for j in 0..d {
            if j >= d / 3 {
                assert_eq!(a[j], b[j], "column {j}");
            }
        }
        assert!((0..d / 3).any(|j| a[j] != b[j]));
    }

    #[test]
    fn pure_and_bounded() {
        let a = sincos_positions::<f32>(GRID, 384);
        let b = sincos_positions::<f32>(GRID, 384);
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn remainder_columns_are_zero() {
        let t = sincos_positions::<f64>(GRID, 32);
        for i in 0..GRID.len() {
            assert_eq!(&t.row(i)[30..], &[0.0, 0.0]);
        }
    }
}
