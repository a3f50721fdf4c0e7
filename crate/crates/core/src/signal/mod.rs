//! From raw multichannel recordings to model-ready clips.

mod augment;
mod clip;
mod container;
pub mod filter;
mod preprocess;
pub mod resample;
mod synth;

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

pub use augment::{augment, flip_frames, Augmentation, AugmentationSpec};
pub use clip::{clip_offsets, sample_clip, sample_clip_at, Clip, ClipConfig};
pub use container::{
    decode_recording, encode_recording,
    import_csv, read_recording, read_windows, write_recording, write_windows, RECORDING_MAGIC, WINDOWS_MAGIC,
};
pub use preprocess::{preprocess, window_count, PreprocessConfig};
pub use synth::{synth_generate, BandProfile, SynthConfig, ABNORMAL_PROFILE, NORMAL_PROFILE};

/// The 19 electrodes of the 10-20 system, in the default order.
pub const STANDARD_CHANNELS: [&str; 19] = [
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "T3", "C3", "Cz", "C4", "T4", "T5", "P3", "Pz", "P4", "T6", "O1", "O2",
];

pub fn standard_channels() -> Vec<String> {
    STANDARD_CHANNELS.iter().map(|s| s.to_string()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Abnormal,
}

impl Label {
    /// Class index; `Abnormal` is the positive class.
    pub fn index(self) -> usize {
        match self {
            Label::Normal => 0,
            Label::Abnormal => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Label::Normal),
            1 => Some(Label::Abnormal),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Male,
    Female,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: Option<String>,
    pub age: Option<f32>,
    pub sex: Option<Sex>,
}

/// Raw multichannel signal, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    pub id: String,
    pub channel_names: Vec<String>,
    pub sample_rate: f64,
    pub samples: Vec<Vec<f32>>,
    pub label: Option<Label>,
    pub subject: Subject,
}

impl Recording {
    pub fn num_channels(&self) -> usize {
        self.samples.len()
    }

    pub fn num_samples(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn duration_s(&self) -> f64 {
        self.num_samples() as f64 / self.sample_rate
    }

    /// Subject identifier used for split assignment (falls back to the recording id).
    pub fn subject_key(&self) -> &str {
        self.subject.id.as_deref().unwrap_or(&self.id)
    }

    pub fn validate(&self) -> crate::Result<()> {
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(crate::Error::Ingest(format!(
                "{}: sample rate must be positive, got {}",
                self.id, self.sample_rate
            )));
        }
        if self.channel_names.len() != self.samples.len() {
            return Err(crate::Error::Ingest(format!(
                "{}: {} channel names for {} channels",
                self.id,
                self.channel_names.len(),
                self.samples.len()
            )));
        }
        let n = self.num_samples();
        if self.samples.iter().any(|c| c.len() != n) {
            return Err(crate::Error::Ingest(format!("{}: channels differ in length", self.id)));
        }
        Ok(())
    }
}

/// Normalized fixed-length windows of one recording, `[windows, channels, width]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedRecording {
    pub id: String,
    pub windows: Tensor<f32>,
    pub stride: usize,
    pub label: Option<Label>,
    pub subject: Subject,
}

impl WindowedRecording {
    pub fn num_windows(&self) -> usize {
        self.windows.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.windows.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.windows.shape()[2]
    }

    pub fn window(&self, i: usize) -> &[f32] {
        let n = self.channels() * self.width();
        &self.windows.data()[i * n..(i + 1) * n]
    }

    pub fn subject_key(&self) -> &str {
        self.subject.id.as_deref().unwrap_or(&self.id)
    }
}
