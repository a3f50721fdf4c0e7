mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use eeg_jepa::interpret::{attention_rollout, psd_welch, relative_band_power, residual_normalize};
use eeg_jepa::model::{sample_mask, MaskConfig};
use eeg_jepa::nn::TokenGrid;
use eeg_jepa::probe::{auroc, compute_metrics};
use eeg_jepa::tensor::grad_check_inputs;

fn stochastic(n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = DMatrix::from_fn(n, n, |_, _| rand::Rng::random_range(&mut rng, 0.0..1.0f64));
    for mut row in m.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn every_op_passes_grad_check(seed in any::<u64>()) {
        for case in common::op_cases(seed) {
            let err = grad_check_inputs(&case.f, &case.inputs, 1e-5).unwrap();
            prop_assert!(err < 1e-4, "{}: {err}", case.name);
        }
    }

    #[test]
    fn masks_partition_and_span_time(
        seed in any::<u64>(),
        temporal in 1usize..6,
        channel in 1usize..7,
        time in 2usize..20,
        blocks in 1usize..4,
        lo in 0.05f64..0.5,
        width in 0.0f64..0.4,
    ) {
        let grid = TokenGrid { temporal, channel, time };
        let cfg = MaskConfig { num_blocks: blocks, spatial_scale: (lo, (lo + width).min(0.95)), ..MaskConfig::default() };
        let m = sample_mask(grid, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut seen = vec![0u8; grid.len()];
        for &i in m.masked.iter().chain(&m.visible) {
            seen[i] += 1;
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        prop_assert!(m.masked_fraction() > 0.0 && m.masked_fraction() < 1.0);
        for &i in &m.masked {
            let (_, c, w) = grid.coords(i);
            for t in 0..temporal {
                prop_assert!(m.masked.binary_search(&grid.index(t, c, w)).is_ok());
            }
        }
    }

    #[test]
    fn rollout_stays_row_stochastic(layers in 1usize..5, n in 2usize..24, seed in any::<u64>()) {
        let stack: Vec<_> = (0..layers).map(|l| stochastic(n, seed.wrapping_add(l as u64))).collect();
        let r = attention_rollout(&stack).unwrap();
        for row in r.row_iter() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn rollout_incremental_matches_tree(n in 2usize..16, seed in any::<u64>()) {
        let stack: Vec<_> = (0..4).map(|l| stochastic(n, seed ^ l)).collect();
        let t: Vec<_> = stack.iter().map(|a| residual_normalize(a).unwrap()).collect();
        let tree = (&t[0] * &t[1]) * (&t[2] * &t[3]);
        let inc = attention_rollout(&stack).unwrap();
        prop_assert!((tree - inc).abs().max() < 1e-6);
    }

    #[test]
    fn auroc_ignores_monotone_transforms(
        scores in prop::collection::vec(-3.0f64..3.0, 4..60),
        flips in prop::collection::vec(any::<bool>(), 60),
        a in 0.1f64..5.0,
        b in -2.0f64..2.0,
    ) {
        let mut labels: Vec<usize> = scores.iter().zip(&flips).map(|(_, &f)| f as usize).collect();
        labels[0] = 0;
        labels[1] = 1;
        let base = auroc(&scores, &labels).unwrap();
        let exp: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        let affine: Vec<f64> = scores.iter().map(|s| a * s + b).collect();
        prop_assert!((auroc(&exp, &labels).unwrap() - base).abs() < 1e-12);
        prop_assert!((auroc(&affine, &labels).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn metric_ranges(
        scores in prop::collection::vec(0.0f64..1.0, 4..60),
        flips in prop::collection::vec(any::<bool>(), 60),
    ) {
        let mut labels: Vec<usize> = scores.iter().zip(&flips).map(|(_, &f)| f as usize).collect();
        labels[0] = 0;
        labels[1] = 1;
        let r = compute_metrics(&scores, &labels, 0).unwrap();
        prop_assert_eq!(r.total(), scores.len());
        prop_assert!((r.accuracy + r.error_rate() - 1.0).abs() < 1e-12);
        for v in [r.accuracy, r.f1, r.auroc] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert_eq!(r, compute_metrics(&scores, &labels, 0).unwrap());
    }

    #[test]
    fn band_powers_sum_to_one(signal in prop::collection::vec(-10.0f64..10.0, 400..1200)) {
        let s = psd_welch(&signal, 100.0, 200, 100).unwrap();
        prop_assert!(s.psd.iter().all(|&p| p >= 0.0));
        let b = relative_band_power(&s).as_array();
        prop_assert!(b.iter().all(|&v| v >= 0.0));
        prop_assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}
