//! Run configuration, run directories and dataset folders.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::model::JepaConfig;
use crate::probe::ProbeConfig;
use crate::signal::{read_recording, read_windows, PreprocessConfig, Recording, SynthConfig, WindowedRecording};
use crate::train::TrainConfig;

pub const RECORDING_EXT: &str = "eegr";
pub const WINDOWS_EXT: &str = "eegw";

/// Every tunable of a run; unknown keys are rejected at any level.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Folder of windowed recordings.
    pub data: Option<PathBuf>,
    /// Run directory.
    pub out: Option<PathBuf>,
    pub synth: SynthConfig,
    pub preprocess: PreprocessConfig,
    pub model: JepaConfig,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.probe.validate()?;
        if self.model.window != self.preprocess.window {
            return Err(config(format!(
                "model window {} differs from preprocessing window {}",
                self.model.window, self.preprocess.window
            )));
        }
        Ok(())
    }
}

/// Create `dir` for a new run. An existing non-empty directory is refused
/// unless `force` is set.
pub fn prepare_run_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let used = fs::read_dir(dir)?.next().is_some();
        if used && !force {
            return Err(config(format!(
                "run directory {} is not empty (pass --force to reuse it)",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

fn files_with_ext(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(config(format!("no .{ext} files in {}", dir.display())));
    }
    Ok(files)
}

/// Windowed recordings from a folder (sorted by file name) or a single file.
pub fn load_windows(path: &Path) -> Result<Vec<WindowedRecording>> {
    if path.is_file() {
        return Ok(vec![read_windows(path)?]);
    }
    files_with_ext(path, WINDOWS_EXT)?.iter().map(|p| read_windows(p)).collect()
}

/// Raw recordings from a folder (sorted by file name) or a single file.
pub fn load_recordings(path: &Path) -> Result<Vec<Recording>> {
    if path.is_file() {
        return Ok(vec![read_recording(path)?]);
    }
    files_with_ext(path, RECORDING_EXT)?.iter().map(|p| read_recording(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("colour = 1").is_err());
        assert!(RunConfig::from_toml("[model]\ndepht = 3").is_err());
        assert!(RunConfig::from_toml("[train.schedule]\nwarmup = 3").is_err());
    }

    #[test]
    fn partial_sections() {
        let cfg = RunConfig::from_toml("[model]\npreset = \"tiny\"\n[train]\nepochs = 5\n").unwrap();
        assert_eq!(cfg.train.epochs, 5);
        assert_eq!(cfg.model.dims().dim, 32);
    }

    #[test]
    fn run_dir_reuse_needs_force() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("run");
        prepare_run_dir(&dir, false).unwrap();
        prepare_run_dir(&dir, false).unwrap();
        fs::write(dir.join("x"), "1").unwrap();
        assert!(prepare_run_dir(&dir, false).is_err());
        prepare_run_dir(&dir, true).unwrap();
    }
}
