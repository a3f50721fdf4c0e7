//! Self-supervised joint-embedding predictive pretraining for multichannel EEG.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense tensors and a reverse-mode autodiff tape.
//! * [`nn`]: transformer building blocks, tubelet embedding, positional tables.
//! * [`signal`]: recordings, preprocessing, clip sampling, augmentation, the
//!   synthetic generator and on-disk containers.
//! * [`model`]: masking, the context/target encoders, the predictor and the
//!   latent L1 objective.
//! * [`train`]: optimizer, schedules, the pretraining loop, checkpoints.
//! * [`probe`]: attentive probe evaluation and classification metrics.
//! * [`interpret`]: attention rollout, spectra, band power, embedding export.
//! * [`config`]: run configuration and dataset folders.

pub mod config;
pub mod error;
pub mod interpret;
pub mod model;
pub mod nn;
pub mod probe;
pub mod signal;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
