use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use eeg_jepa::model::{JepaConfig, JepaModel};
use eeg_jepa::nn::Module;
use eeg_jepa::probe::{
    compute_metrics, finetune, fit_head, score_recordings, subject_split, train_probe, ProbeConfig, ProbeSample,
};
use eeg_jepa::signal::{preprocess, synth_generate, Label, PreprocessConfig, SynthConfig, WindowedRecording};
use eeg_jepa::tensor::Tensor;

fn short_dataset(n: usize, seed: u64) -> Vec<WindowedRecording> {
    let synth = SynthConfig {
        n_recordings: n,
        seed,
        duration_s: 60.0,
        ..SynthConfig::default()
    };
    let pre = PreprocessConfig {
        duration_s: 60.0,
        ..PreprocessConfig::default()
    };
    synth_generate(&synth)
        .unwrap()
        .iter()
        .map(|r| preprocess(r, &pre).unwrap())
        .collect()
}

fn quick_probe() -> ProbeConfig {
    ProbeConfig {
        epochs: 2,
        num_clips: 1,
        sampling_rate: 1,
        val_fraction: 0.5,
        ..ProbeConfig::default()
    }
}

fn param_hash(m: &impl Module<f32>) -> u64 {
    let mut h = DefaultHasher::new();
    for (name, p) in m.named_params() {
        name.hash(&mut h);
        for v in p.value.data() {
            v.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

#[test]
fn frozen_probe_leaves_encoder_untouched() {
    let data = short_dataset(12, 5);
    let model = JepaModel::<f32>::new(JepaConfig::tiny(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let before = param_hash(&model);
    let out = train_probe(&model, &data, &quick_probe()).unwrap();
    assert_eq!(param_hash(&model), before);
    assert_eq!(out.report.total(), out.val_recordings);
    assert_eq!(out.train_recordings + out.val_recordings, 12);
}

#[test]
fn finetuning_moves_the_context_encoder_only() {
    let data = short_dataset(12, 5);
    let mut model = JepaModel::<f32>::new(JepaConfig::tiny(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let (x, y) = (param_hash(&model.x_encoder), param_hash(&model.y_encoder));
    let cfg = ProbeConfig {
        epochs: 1,
        encoder_lr: 1e-3,
        ..quick_probe()
    };
    let out = finetune(&mut model, &data, &cfg).unwrap();
    assert_ne!(param_hash(&model.x_encoder), x);
    assert_eq!(param_hash(&model.y_encoder), y);
    assert_eq!(out.report.lines().len(), 3);
}

#[test]
fn splits_are_subject_disjoint() {
    let mut data = short_dataset(12, 5);
    // two recordings per subject
    for (i, rec) in data.iter_mut().enumerate() {
        rec.subject.id = Some(format!("subject-{}", i / 2));
    }
    let (train, val) = subject_split(&data, 0.5).unwrap();
    for &t in &train {
        for &v in &val {
            assert_ne!(data[t].subject_key(), data[v].subject_key());
        }
    }
}

#[test]
fn single_class_split_is_a_config_error() {
    let mut data = short_dataset(8, 5);
    for rec in &mut data {
        rec.label = Some(Label::Normal);
    }
    let err = subject_split(&data, 0.5).unwrap_err();
    assert!(matches!(err, eeg_jepa::Error::Config(_)), "{err}");
    assert!(train_probe(
        &JepaModel::new(JepaConfig::tiny(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap(),
        &data,
        &quick_probe()
    )
    .is_err());
}

#[test]
fn shuffled_labels_give_chance_auroc() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut make = |n: usize, offset: usize| -> Vec<ProbeSample> {
        let mut labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        labels.shuffle(&mut rng);
        labels
            .into_iter()
            .enumerate()
            .map(|(i, label)| ProbeSample {
                tokens: Tensor::from_fn([4, 8], |_| rng.random_range(-1.0..1.0)),
                label,
                recording: offset + i,
            })
            .collect()
    };
    let train = make(200, 0);
    let val = make(200, 1000);
    let head = fit_head(&train, &ProbeConfig { epochs: 5, ..ProbeConfig::default() }).unwrap();
    let (scores, labels) = score_recordings(&head, &val).unwrap();
    let r = compute_metrics(&scores, &labels, 0).unwrap();
    assert!((0.4..=0.6).contains(&r.auroc), "{r:?}");
}
