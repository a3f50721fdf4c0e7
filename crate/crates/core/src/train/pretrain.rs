use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{clip_grad_norm, global_norm, save_checkpoint, AdamW, Schedule, ScheduleConfig};
use crate::error::{config, Error, Result};
use crate::model::{sample_mask, JepaConfig, JepaModel, MaskSpec};
use crate::signal::{augment, clip_offsets, sample_clip_at, AugmentationSpec, ClipConfig, WindowedRecording};
use crate::tensor::{Graph, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Recordings per optimizer step; their losses are averaged.
    pub batch_size: usize,
    pub seed: u64,
    pub sampling_rate: usize,
    pub num_clips: usize,
    /// Draw clip start windows at random instead of the fixed partition.
    pub random_offsets: bool,
    pub decay_1d: bool,
    /// Save a checkpoint every this many epochs (0: only at the end).
    pub checkpoint_every: usize,
    pub schedule: ScheduleConfig,
    pub augmentation: AugmentationSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 4,
            seed: 0,
            sampling_rate: 3,
            num_clips: 1,
            random_offsets: true,
            decay_1d: false,
            checkpoint_every: 0,
            schedule: ScheduleConfig::default(),
            augmentation: AugmentationSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(config("epochs and batch_size must be positive"));
        }
        self.schedule.validate()?;
        self.augmentation.validate()
    }
}

/// Mean over embedding dimensions of the per-dimension standard deviation.
pub fn collapse_metric(rows: &Tensor<f32>) -> f64 {
    let (n, d) = match rows.dims2() {
        Ok(nd) => nd,
        Err(_) => return 0.0,
    };
    if n < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for j in 0..d {
        let col = (0..n).map(|i| rows.data()[i * d + j] as f64);
        let mean = col.clone().sum::<f64>() / n as f64;
        let var = col.map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        total += var.sqrt();
    }
    total / d as f64
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepStats {
    pub step: u64,
    pub lr: f64,
    pub wd: f64,
    pub momentum: f64,
    pub loss: f64,
    pub collapse: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    /// Global gradient norm after clipping.
    pub clipped_norm: f64,
}

impl StepStats {
    pub const CSV_HEADER: &'static str = "step,lr,wd,momentum,loss,collapse,grad_norm";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{},{},{},{}",
            self.step, self.lr, self.wd, self.momentum, self.loss, self.collapse, self.grad_norm
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    /// Smallest collapse metric seen in each epoch.
    pub epoch_min_collapse: Vec<f64>,
    pub steps: Vec<StepStats>,
    pub last_checkpoint: Option<PathBuf>,
}

/// Everything that evolves during pretraining.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: JepaModel<f32>,
    pub optimizer: AdamW,
    pub config: TrainConfig,
    pub step: u64,
    pub epoch: usize,
    rng: ChaCha8Rng,
}

struct Item {
    patches: Tensor<f32>,
    mask: MaskSpec,
}

impl Trainer {
    pub fn new(model_config: JepaConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = JepaModel::new(model_config, &mut rng)?;
        let optimizer = AdamW {
            decay_1d: config.decay_1d,
            ..AdamW::default()
        };
        Ok(Self::from_parts(model, optimizer, config, rng, 0, 0))
    }

    pub fn from_parts(
        model: JepaModel<f32>,
        optimizer: AdamW,
        config: TrainConfig,
        rng: ChaCha8Rng,
        step: u64,
        epoch: usize,
    ) -> Self {
        Self {
            model,
            optimizer,
            config,
            step,
            epoch,
            rng,
        }
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    pub fn clip_config(&self) -> ClipConfig {
        ClipConfig {
            frames: self.model.config.frames,
            sampling_rate: self.config.sampling_rate,
            num_clips: self.config.num_clips,
            tubelet: self.model.config.tubelet,
        }
    }

    pub fn steps_per_epoch(&self, dataset_len: usize) -> usize {
        dataset_len.div_ceil(self.config.batch_size)
    }

    pub fn schedule(&self, dataset_len: usize) -> Result<Schedule> {
        Schedule::new(self.config.schedule.clone(), self.config.epochs, self.steps_per_epoch(dataset_len))
    }

    /// Draw clips, augmentations and masks; all randomness happens here, in order.
    fn prepare(&mut self, batch: &[&WindowedRecording]) -> Result<Vec<Item>> {
        let cfg = self.clip_config();
        let mut items = Vec::with_capacity(batch.len() * cfg.num_clips);
        for rec in batch {
            let offsets = clip_offsets(rec.num_windows(), &cfg)?;
            let slack = rec.num_windows() - cfg.frames * cfg.sampling_rate;
            for &fixed in &offsets {
                let start = if self.config.random_offsets {
                    self.rng.random_range(0..=slack)
                } else {
                    fixed
                };
                let clip = sample_clip_at(rec, &cfg, start)?;
                let clip = augment(&clip, &self.config.augmentation, &mut self.rng)?;
                let patches = self.model.patches(&clip.data)?;
                let mask = sample_mask(self.model.grid(), &self.model.config.mask, &mut self.rng)?;
                items.push(Item { patches, mask });
            }
        }
        Ok(items)
    }

    /// One optimizer step on `batch`. Per-clip work may run on several
    /// threads; gradients are reduced in a fixed order, so the result does
    /// not depend on the thread count.
    pub fn train_step(&mut self, batch: &[&WindowedRecording], schedule: &Schedule) -> Result<StepStats> {
        if batch.is_empty() {
            return Err(config("empty batch"));
        }
        let items = self.prepare(batch)?;
        let n = items.len();
        let model = &self.model;
        let results: Vec<Result<(f64, Vec<Vec<f32>>, Tensor<f32>)>> = items
            .par_iter()
            .map(|item| {
                let mut g = Graph::new();
                let out = model.forward_loss(&mut g, &item.patches, &item.mask)?;
                let loss = g.value(out.loss).item() as f64;
                let scaled = g.scale(out.loss, 1.0 / n as f32);
                g.backward(scaled)?;
                let grads = model
                    .trainable()
                    .iter()
                    .map(|(_, p)| g.param_grad(p).map_or_else(|| vec![0.0; p.value.len()], <[f32]>::to_vec))
                    .collect();
                Ok((loss, grads, out.targets))
            })
            .collect();

        let mut loss = 0.0;
        let mut grads: Vec<Vec<f32>> = Vec::new();
        let mut targets = Vec::new();
        for r in results {
            let (l, gr, t) = r?;
            loss += l;
            if grads.is_empty() {
                grads = gr;
            } else {
                for (acc, g) in grads.iter_mut().zip(gr) {
                    acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            targets.extend_from_slice(t.data());
        }
        loss /= n as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                step: self.step,
                what: format!("loss = {loss}"),
                last_checkpoint: None,
            });
        }
        let d = self.model.dim();
        let collapse = collapse_metric(&Tensor::new([targets.len() / d, d], targets)?);

        let grad_norm = global_norm(grads.iter().map(Vec::as_slice));
        clip_grad_norm(&mut grads, schedule.config.clip_norm);
        let clipped_norm = global_norm(grads.iter().map(Vec::as_slice));

        let (lr, wd, momentum) = (
            schedule.lr_at(self.step),
            schedule.wd_at(self.step),
            schedule.momentum_at(self.step),
        );
        let mut params = self.model.trainable_mut();
        self.optimizer.step(&mut params, &grads, lr, wd)?;
        self.model.ema_update(momentum)?;

        let stats = StepStats {
            step: self.step,
            lr,
            wd,
            momentum,
            loss,
            collapse,
            grad_norm,
            clipped_norm,
        };
        self.step += 1;
        Ok(stats)
    }
}

fn append_log(path: &Path, rows: &[StepStats]) -> Result<()> {
    let fresh = !path.exists();
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "{}", StepStats::CSV_HEADER)?;
    }
    for r in rows {
        writeln!(f, "{}", r.csv_row())?;
    }
    Ok(())
}

/// Run the remaining epochs of `trainer` over `dataset`. With `out_dir`,
/// steps are appended to `log.csv` and checkpoints written as
/// `checkpoint.ckpt` (latest) and `checkpoint-epoch-N.ckpt`.
pub fn pretrain(
    trainer: &mut Trainer,
    dataset: &[WindowedRecording],
    out_dir: Option<&Path>,
    mut on_step: impl FnMut(&StepStats),
) -> Result<TrainReport> {
    if dataset.is_empty() {
        return Err(config("pretraining dataset is empty"));
    }
    let schedule = trainer.schedule(dataset.len())?;
    let mut report = TrainReport::default();
    while trainer.epoch < trainer.config.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut trainer.rng);
        let mut epoch_steps = Vec::new();
        for chunk in order.chunks(trainer.config.batch_size) {
            let batch: Vec<&WindowedRecording> = chunk.iter().map(|&i| &dataset[i]).collect();
            let stats = trainer.train_step(&batch, &schedule).map_err(|e| match e {
                Error::NonFinite { step, what, .. } => Error::NonFinite {
                    step,
                    what,
                    last_checkpoint: report.last_checkpoint.clone(),
                },
                other => other,
            })?;
            on_step(&stats);
            epoch_steps.push(stats);
        }
        trainer.epoch += 1;
        report
            .epoch_losses
            .push(epoch_steps.iter().map(|s| s.loss).sum::<f64>() / epoch_steps.len() as f64);
        report
            .epoch_min_collapse
            .push(epoch_steps.iter().map(|s| s.collapse).fold(f64::INFINITY, f64::min));
        if let Some(dir) = out_dir {
            append_log(&dir.join("log.csv"), &epoch_steps)?;
            let every = trainer.config.checkpoint_every;
            let last = trainer.epoch == trainer.config.epochs;
            if last || (every > 0 && trainer.epoch % every == 0) {
                let latest = dir.join("checkpoint.ckpt");
                save_checkpoint(&latest, trainer)?;
                if every > 0 && trainer.epoch % every == 0 {
                    save_checkpoint(&dir.join(format!("checkpoint-epoch-{}.ckpt", trainer.epoch)), trainer)?;
                }
                report.last_checkpoint = Some(latest);
            }
        }
        report.steps.extend(epoch_steps);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn collapse_metric_extremes() {
        let same = Tensor::from_fn([50, 8], |i| (i % 8) as f32);
        assert_eq!(collapse_metric(&same), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let normal = Tensor::from_fn([1000, 16], |_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v as f32
        });
        assert!((collapse_metric(&normal) - 1.0).abs() < 0.1);
    }
}
