use eeg_jepa_demo::{mask_grid, rollout_grid, spectrum};

#[test]
fn mask_preview_is_a_proper_mask() {
    for seed in 0..20 {
        let g = mask_grid(seed, 2, 0.15, 0.45).unwrap();
        assert_eq!((g.rows(), g.cols()), (5, 16));
        let masked = g.values().iter().filter(|&&v| v == 1.0).count();
        assert!(masked > 0 && masked < 80);
        assert!((g.summary() - masked as f64 / 80.0).abs() < 1e-12);
    }
}

#[test]
fn bad_mask_scale_is_rejected() {
    assert!(mask_grid(0, 2, 0.6, 0.2).is_err());
}

#[test]
fn spectra_separate_the_classes() {
    let normal = spectrum(false, 3, 120.0).unwrap();
    let abnormal = spectrum(true, 3, 120.0).unwrap();
    assert!((normal.bands().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(normal.bands()[3] > abnormal.bands()[3]);
    assert!(normal.bands()[0] < abnormal.bands()[0]);
    assert_eq!(normal.freqs().len(), normal.psd().len());
    assert!(*normal.freqs().last().unwrap() <= 50.0);
}

#[test]
fn rollout_heatmap_of_random_model() {
    let g = rollout_grid(1, false, None).unwrap();
    assert_eq!((g.rows(), g.cols()), (5, 16));
    assert_eq!(g.summary(), 2.0);
    // query-averaged column masses sum to 1; averaging over the 4 temporal slices leaves 1/4
    let total: f64 = g.values().iter().sum::<f64>();
    assert!((total - 0.25).abs() < 1e-6, "{total}");
    assert!(rollout_grid(1, false, Some(b"not a checkpoint")).is_err());
}
