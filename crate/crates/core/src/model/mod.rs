//! Masked latent prediction: a context encoder over visible tokens, a
//! predictor that fills in masked positions, and an EMA target encoder.

mod config;
mod encoder;
mod jepa;
mod mask;

pub use config::{JepaConfig, LossSpace, ModelDims, Preset};
pub use encoder::{Encoder, EncoderOutput, Predictor};
pub use jepa::{jepa_loss, JepaModel, JepaStep};
pub use mask::{mask_from_blocks, sample_mask, Block, MaskConfig, MaskSpec};
