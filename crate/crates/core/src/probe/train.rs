use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::head::ProbeHead;
use super::metrics::{compute_metrics, EvalReport};
use crate::error::{config, contract, Result};
use crate::model::JepaModel;
use crate::nn::{Module, Tubelet};
use crate::signal::{clip_offsets, sample_clip_at, ClipConfig, WindowedRecording};
use crate::tensor::{Graph, Param, Tensor};
use crate::train::{clip_grad_norm, AdamW};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub queries: usize,
    pub heads: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Encoder learning rate when fine-tuning.
    pub encoder_lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Share of subjects held out for validation.
    pub val_fraction: f64,
    pub num_clips: usize,
    pub sampling_rate: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            queries: 1,
            heads: 1,
            epochs: 20,
            batch_size: 16,
            lr: 1e-3,
            encoder_lr: 1e-5,
            weight_decay: 0.01,
            seed: 0,
            val_fraction: 0.3,
            num_clips: 4,
            sampling_rate: 3,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.queries == 0 || self.heads == 0 || self.batch_size == 0 || self.num_clips == 0 {
            return Err(config("probe queries, heads, batch_size and num_clips must be positive"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(config(format!("val_fraction {} must lie in (0, 1)", self.val_fraction)));
        }
        if !(self.lr > 0.0 && self.encoder_lr >= 0.0 && self.weight_decay >= 0.0) {
            return Err(config("probe learning rates and weight decay must be non-negative"));
        }
        Ok(())
    }

    fn clip_config(&self, frames: usize, tubelet: Tubelet) -> ClipConfig {
        ClipConfig {
            frames,
            sampling_rate: self.sampling_rate,
            num_clips: self.num_clips,
            tubelet,
        }
    }
}

/// One clip's encoder tokens with its recording's label.
#[derive(Clone, Debug)]
pub struct ProbeSample {
    pub tokens: Tensor<f32>,
    pub label: usize,
    /// Index of the source recording, for recording-level scoring.
    pub recording: usize,
}

pub struct ProbeOutcome {
    pub head: ProbeHead<f32>,
    pub report: EvalReport,
    pub train_recordings: usize,
    pub val_recordings: usize,
}

fn fnv1a(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Split by a hash of the subject id, so no subject lands on both sides.
/// Returns `(train, val)` recording indices.
pub fn subject_split(data: &[WindowedRecording], val_fraction: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    let cut = (val_fraction * 10_000.0).round() as u64;
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (i, rec) in data.iter().enumerate() {
        if fnv1a(rec.subject_key()) % 10_000 < cut {
            val.push(i);
        } else {
            train.push(i);
        }
    }
    for (name, idx) in [("training", &train), ("validation", &val)] {
        let labels: Vec<usize> = idx.iter().filter_map(|&i| data[i].label.map(|l| l.index())).collect();
        if labels.len() != idx.len() {
            return Err(config(format!("{name} split contains unlabeled recordings")));
        }
        if !(labels.contains(&0) && labels.contains(&1)) {
            return Err(config(format!("{name} split has a single class ({} recordings)", idx.len())));
        }
    }
    Ok((train, val))
}

fn label_of(rec: &WindowedRecording) -> Result<usize> {
    rec.label
        .map(|l| l.index())
        .ok_or_else(|| config(format!("recording {} has no label", rec.id)))
}

/// Evenly spaced clips of each recording, as model patches.
fn clip_patches(model: &JepaModel<f32>, rec: &WindowedRecording, cfg: &ClipConfig) -> Result<Vec<Tensor<f32>>> {
    clip_offsets(rec.num_windows(), cfg)?
        .into_iter()
        .map(|start| model.patches(&sample_clip_at(rec, cfg, start)?.data))
        .collect()
}

/// Frozen full-sequence tokens for every clip of the given recordings.
pub fn encode_samples(
    model: &JepaModel<f32>,
    data: &[WindowedRecording],
    indices: &[usize],
    cfg: &ProbeConfig,
) -> Result<Vec<ProbeSample>> {
    let clip_cfg = cfg.clip_config(model.config.frames, model.config.tubelet);
    let per_rec: Vec<Result<Vec<ProbeSample>>> = indices
        .par_iter()
        .map(|&i| {
            let label = label_of(&data[i])?;
            clip_patches(model, &data[i], &clip_cfg)?
                .into_iter()
                .map(|patches| {
                    let mut g = Graph::no_grad();
                    let out = model.encode(&mut g, &patches)?;
                    Ok(ProbeSample {
                        tokens: g.value(out.out).clone(),
                        label,
                        recording: i,
                    })
                })
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    for r in per_rec {
        out.extend(r?);
    }
    Ok(out)
}

fn params_mut<'a, M: Module<f32>>(m: &'a mut M, prefix: &str) -> Vec<(String, &'a mut Param<f32>)> {
    let mut out = Vec::new();
    m.visit_mut(prefix, &mut |name, p| out.push((name, p)));
    out
}

fn grads_of<M: Module<f32>>(g: &Graph<f32>, m: &M) -> Vec<Vec<f32>> {
    m.named_params()
        .iter()
        .map(|(_, p)| g.param_grad(p).map_or_else(|| vec![0.0; p.value.len()], <[f32]>::to_vec))
        .collect()
}

fn accumulate(acc: &mut Vec<Vec<f32>>, g: Vec<Vec<f32>>) {
    if acc.is_empty() {
        *acc = g;
    } else {
        for (a, b) in acc.iter_mut().zip(g) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

const CLIP_NORM: f64 = 10.0;

/// Cross-entropy training of a fresh head on fixed tokens.
pub fn fit_head(samples: &[ProbeSample], cfg: &ProbeConfig) -> Result<ProbeHead<f32>> {
    cfg.validate()?;
    let first = samples.first().ok_or_else(|| config("no probe training samples"))?;
    let dim = first.tokens.shape()[1];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut head = ProbeHead::new(dim, cfg.queries, cfg.heads, 2, &mut rng)?;
    let mut opt = AdamW::default();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let n = chunk.len() as f32;
            let head_ref = &head;
            let results: Vec<Result<Vec<Vec<f32>>>> = chunk
                .par_iter()
                .map(|&i| {
                    let mut g = Graph::new();
                    let tokens = g.constant(samples[i].tokens.clone());
                    let out = head_ref.forward(&mut g, tokens)?;
                    let loss = g.cross_entropy(out.logits, &[samples[i].label])?;
                    let loss = g.scale(loss, 1.0 / n);
                    g.backward(loss)?;
                    Ok(grads_of(&g, head_ref))
                })
                .collect();
            let mut grads = Vec::new();
            for r in results {
                accumulate(&mut grads, r?);
            }
            clip_grad_norm(&mut grads, CLIP_NORM);
            opt.step(&mut params_mut(&mut head, ""), &grads, cfg.lr, cfg.weight_decay)?;
        }
    }
    Ok(head)
}

fn logits(head: &ProbeHead<f32>, tokens: &Tensor<f32>) -> Result<[f64; 2]> {
    let mut g = Graph::no_grad();
    let t = g.constant(tokens.clone());
    let out = head.forward(&mut g, t)?;
    let v = g.value(out.logits).data();
    Ok([v[0] as f64, v[1] as f64])
}

/// Positive-class probability of the mean clip logits per recording, in
/// order of first appearance. Returns `(scores, labels)`.
pub fn score_recordings(head: &ProbeHead<f32>, samples: &[ProbeSample]) -> Result<(Vec<f64>, Vec<usize>)> {
    let clip_logits: Vec<[f64; 2]> = samples
        .par_iter()
        .map(|s| logits(head, &s.tokens))
        .collect::<Result<_>>()?;
    let mut recs: Vec<(usize, usize, [f64; 2], usize)> = Vec::new();
    for (s, l) in samples.iter().zip(clip_logits) {
        match recs.iter_mut().find(|r| r.0 == s.recording) {
            Some(r) => {
                if r.1 != s.label {
                    return Err(contract(format!("recording {} has clips with different labels", s.recording)));
                }
                r.2[0] += l[0];
                r.2[1] += l[1];
                r.3 += 1;
            }
            None => recs.push((s.recording, s.label, l, 1)),
        }
    }
    let scores = recs
        .iter()
        .map(|&(_, _, [a, b], n)| 1.0 / (1.0 + ((a - b) / n as f64).exp()))
        .collect();
    Ok((scores, recs.iter().map(|r| r.1).collect()))
}

/// Frozen evaluation: the encoder is only read.
pub fn train_probe(model: &JepaModel<f32>, data: &[WindowedRecording], cfg: &ProbeConfig) -> Result<ProbeOutcome> {
    cfg.validate()?;
    let (train, val) = subject_split(data, cfg.val_fraction)?;
    let train_samples = encode_samples(model, data, &train, cfg)?;
    let val_samples = encode_samples(model, data, &val, cfg)?;
    let head = fit_head(&train_samples, cfg)?;
    let (scores, labels) = score_recordings(&head, &val_samples)?;
    Ok(ProbeOutcome {
        report: compute_metrics(&scores, &labels, cfg.seed)?,
        head,
        train_recordings: train.len(),
        val_recordings: val.len(),
    })
}

/// Fine-tuning: the context encoder trains alongside the head at `encoder_lr`.
pub fn finetune(model: &mut JepaModel<f32>, data: &[WindowedRecording], cfg: &ProbeConfig) -> Result<ProbeOutcome> {
    cfg.validate()?;
    let (train, val) = subject_split(data, cfg.val_fraction)?;
    let clip_cfg = cfg.clip_config(model.config.frames, model.config.tubelet);
    let mut items = Vec::new();
    for &i in &train {
        let label = label_of(&data[i])?;
        items.extend(clip_patches(model, &data[i], &clip_cfg)?.into_iter().map(|p| (p, label)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut head = ProbeHead::new(model.dim(), cfg.queries, cfg.heads, 2, &mut rng)?;
    let (mut head_opt, mut enc_opt) = (AdamW::default(), AdamW::default());
    let mut order: Vec<usize> = (0..items.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let n = chunk.len() as f32;
            let (m, h) = (&*model, &head);
            let results: Vec<Result<(Vec<Vec<f32>>, Vec<Vec<f32>>)>> = chunk
                .par_iter()
                .map(|&i| {
                    let (patches, label) = &items[i];
                    let mut g = Graph::new();
                    let tokens = m.encode(&mut g, patches)?.out;
                    let out = h.forward(&mut g, tokens)?;
                    let loss = g.cross_entropy(out.logits, &[*label])?;
                    let loss = g.scale(loss, 1.0 / n);
                    g.backward(loss)?;
                    Ok((grads_of(&g, h), grads_of(&g, &m.x_encoder)))
                })
                .collect();
            let (mut hg, mut eg) = (Vec::new(), Vec::new());
            for r in results {
                let (a, b) = r?;
                accumulate(&mut hg, a);
                accumulate(&mut eg, b);
            }
            clip_grad_norm(&mut hg, CLIP_NORM);
            clip_grad_norm(&mut eg, CLIP_NORM);
            head_opt.step(&mut params_mut(&mut head, ""), &hg, cfg.lr, cfg.weight_decay)?;
            enc_opt.step(&mut params_mut(&mut model.x_encoder, ""), &eg, cfg.encoder_lr, cfg.weight_decay)?;
        }
    }
    let val_samples = encode_samples(model, data, &val, cfg)?;
    let (scores, labels) = score_recordings(&head, &val_samples)?;
    Ok(ProbeOutcome {
        report: compute_metrics(&scores, &labels, cfg.seed)?,
        head,
        train_recordings: train.len(),
        val_recordings: val.len(),
    })
}
