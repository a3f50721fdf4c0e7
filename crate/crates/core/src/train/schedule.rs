use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub warmup_epochs: f64,
    pub start_lr: f64,
    pub ref_lr: f64,
    pub final_lr: f64,
    pub wd_range: (f64, f64),
    pub momentum_range: (f64, f64),
    pub clip_norm: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            warmup_epochs: 40.0,
            start_lr: 2e-4,
            ref_lr: 6.25e-4,
            final_lr: 1e-6,
            wd_range: (0.04, 0.4),
            momentum_range: (0.998, 1.0),
            clip_norm: 10.0,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.start_lr >= 0.0 && self.start_lr <= self.ref_lr && self.final_lr >= 0.0 && self.final_lr <= self.ref_lr) {
            return Err(config(format!(
                "learning rates must satisfy start <= ref and final <= ref, got {} / {} / {}",
                self.start_lr, self.ref_lr, self.final_lr
            )));
        }
        if !(self.wd_range.0 >= 0.0 && self.wd_range.0 <= self.wd_range.1) {
            return Err(config(format!("wd_range {:?} not ordered", self.wd_range)));
        }
        let (m0, m1) = self.momentum_range;
        if !(0.0 <= m0 && m0 <= m1 && m1 <= 1.0) {
            return Err(config(format!("momentum_range {:?} must be ordered within [0, 1]", self.momentum_range)));
        }
        if !(self.warmup_epochs >= 0.0 && self.clip_norm > 0.0) {
            return Err(config("warmup_epochs must be non-negative and clip_norm positive"));
        }
        Ok(())
    }
}

/// Per-step learning rate, weight decay and EMA momentum.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub config: ScheduleConfig,
    pub total_steps: u64,
    pub warmup_steps: u64,
}

impl Schedule {
    pub fn new(config: ScheduleConfig, epochs: usize, steps_per_epoch: usize) -> Result<Self> {
        config.validate()?;
        let total_steps = (epochs * steps_per_epoch) as u64;
        if total_steps == 0 {
            return Err(self::config("schedule needs at least one step"));
        }
        let warmup_steps = ((config.warmup_epochs * steps_per_epoch as f64).round() as u64).min(total_steps);
        Ok(Self {
            config,
            total_steps,
            warmup_steps,
        })
    }

    fn progress(&self, step: u64) -> f64 {
        step.min(self.total_steps) as f64 / self.total_steps as f64
    }

    /// Linear warmup `start → ref`, then cosine `ref → final`; clamps past the end.
    pub fn lr_at(&self, step: u64) -> f64 {
        let c = &self.config;
        let step = step.min(self.total_steps);
        if step < self.warmup_steps {
            return c.start_lr + (c.ref_lr - c.start_lr) * step as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps - self.warmup_steps;
        if span == 0 {
            return c.ref_lr;
        }
        let t = (step - self.warmup_steps) as f64 / span as f64;
        c.final_lr + (c.ref_lr - c.final_lr) * 0.5 * (1.0 + (PI * t).cos())
    }

    /// Cosine from the first to the second end of `wd_range` over all steps.
    pub fn wd_at(&self, step: u64) -> f64 {
        let (start, end) = self.config.wd_range;
        end + (start - end) * 0.5 * (1.0 + (PI * self.progress(step)).cos())
    }

    /// Linear over all steps.
    pub fn momentum_at(&self, step: u64) -> f64 {
        let (start, end) = self.config.momentum_range;
        let m = start + (end - start) * self.progress(step);
        m.min(end)
    }
}
