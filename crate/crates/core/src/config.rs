//! JSON run configuration with sections `stft`, `bands`, `generator`,
//! `discriminator`, `train` and `data`. Unknown keys are rejected with the
//! offending path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::{GriffinLimOptions, StftParams};
use crate::datasets::{load_manifest, Corpus, DatasetManifest};
use crate::error::{ensure, Error, Result};
use crate::models::{DiscriminatorConfig, GeneratorConfig};
use crate::trainer::{RunSettings, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftSection {
    pub window_s: f64,
    pub hop_s: f64,
    pub griffin_lim_iterations: usize,
    pub griffin_lim_seed: u64,
    pub griffin_lim_momentum: f64,
}

impl Default for StftSection {
    fn default() -> Self {
        let p = StftParams::default();
        let g = GriffinLimOptions::default();
        StftSection {
            window_s: p.window_s,
            hop_s: p.hop_s,
            griffin_lim_iterations: g.iterations,
            griffin_lim_seed: g.seed,
            griffin_lim_momentum: g.momentum,
        }
    }
}

impl StftSection {
    pub fn params(&self) -> StftParams {
        StftParams {
            window_s: self.window_s,
            hop_s: self.hop_s,
        }
    }

    pub fn griffin_lim(&self) -> GriffinLimOptions {
        GriffinLimOptions {
            iterations: self.griffin_lim_iterations,
            seed: self.griffin_lim_seed,
            momentum: self.griffin_lim_momentum,
        }
    }
}

/// Band layout lives here rather than in `train`. Explicit widths, when
/// given, fix the band count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BandsSection {
    pub num_bands_x: usize,
    pub num_bands_y: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub widths_x: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub widths_y: Option<Vec<usize>>,
    /// Bands of the evaluation classifier's per-band-mean features.
    pub classifier_bands: usize,
}

impl Default for BandsSection {
    fn default() -> Self {
        BandsSection {
            num_bands_x: 3,
            num_bands_y: 3,
            widths_x: None,
            widths_y: None,
            classifier_bands: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSection {
    pub num_utterances: usize,
    pub duration_s: f64,
    pub seed: u64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        SyntheticSection {
            num_utterances: 100,
            duration_s: 2.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// JSONL manifest; relative paths resolve against the config file.
    pub manifest: Option<PathBuf>,
    /// Spectrogram cache directory; defaults to `cache/` next to the
    /// manifest.
    pub cache_dir: Option<PathBuf>,
    pub synthetic: SyntheticSection,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfigFile {
    pub stft: StftSection,
    pub bands: BandsSection,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub train: TrainConfig,
    pub data: DataSection,
}

fn config_err(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

impl RunConfigFile {
    /// Parses and validates a config document. `base` is the directory
    /// relative data paths resolve against.
    pub fn from_json(text: &str, base: &Path) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| config_err(".", e.to_string()))?;
        if let Some(train) = value.get("train").and_then(|t| t.as_object()) {
            for key in ["num_bands_x", "num_bands_y", "band_widths_x", "band_widths_y"] {
                if train.contains_key(key) {
                    return Err(config_err(format!("train.{key}"), "band layout belongs in the `bands` section"));
                }
            }
        }
        let mut cfg: RunConfigFile = serde_path_to_error::deserialize(&value).map_err(|e| {
            let path = e.path().to_string();
            config_err(path, e.into_inner().to_string())
        })?;
        for p in [&mut cfg.data.manifest, &mut cfg.data.cache_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.sync_bands();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path.parent().unwrap_or(Path::new("")))
    }

    /// Copies the `bands` section into the training config.
    pub fn sync_bands(&mut self) {
        let b = &mut self.bands;
        if let Some(w) = &b.widths_x {
            b.num_bands_x = w.len();
        }
        if let Some(w) = &b.widths_y {
            b.num_bands_y = w.len();
        }
        self.train.num_bands_x = b.num_bands_x;
        self.train.num_bands_y = b.num_bands_y;
        self.train.band_widths_x = b.widths_x.clone();
        self.train.band_widths_y = b.widths_y.clone();
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |section: &str, r: Result<()>| r.map_err(|e| config_err(section, e.to_string()));
        wrap("train", self.train.validate())?;
        wrap("generator", self.generator.validate())?;
        wrap("discriminator", self.discriminator.validate())?;
        wrap(
            "train",
            self.train.bundle_config(&self.generator, &self.discriminator, self.bins()?).map(|_| ()),
        )?;
        ensure!(self.bands.classifier_bands >= 1, InvalidArgument, "bands.classifier_bands must be >= 1");
        let s = &self.data.synthetic;
        if !(s.num_utterances >= 1 && s.duration_s > 0.0 && s.duration_s.is_finite()) {
            return Err(config_err("data.synthetic", "need >= 1 utterance of positive duration"));
        }
        Ok(())
    }

    /// Frequency bins implied by the STFT window at 16 kHz.
    pub fn bins(&self) -> Result<usize> {
        let window = self.stft.window_s * crate::audio::REQUIRED_SAMPLE_RATE as f64;
        let hop = self.stft.hop_s * crate::audio::REQUIRED_SAMPLE_RATE as f64;
        if !(window >= 2.0 && (window - window.round()).abs() < 1e-6 && window.round() as usize % 2 == 0) {
            return Err(config_err("stft.window_s", "window must be an even whole number of samples"));
        }
        if !(hop >= 1.0 && (hop - hop.round()).abs() < 1e-6 && hop <= window) {
            return Err(config_err("stft.hop_s", "hop must be a whole number of samples no longer than the window"));
        }
        Ok(window.round() as usize / 2 + 1)
    }

    /// `data.cache_dir`, or `cache/` beside the manifest.
    pub fn cache_dir(&self, manifest: &DatasetManifest) -> PathBuf {
        self.data.cache_dir.clone().unwrap_or_else(|| manifest.root.join("cache"))
    }

    /// Loads the corpus listed in `manifest` (or `data.manifest`) through
    /// the spectrogram cache.
    pub fn load_corpus(&self, manifest: Option<&Path>) -> Result<Corpus> {
        let path = manifest
            .or(self.data.manifest.as_deref())
            .ok_or_else(|| Error::InvalidArgument("no manifest: pass --in or set data.manifest".into()))?;
        let m = load_manifest(path)?;
        Corpus::load(&m, &self.stft.params(), Some(&self.cache_dir(&m)))
    }

    pub fn run_settings(&self) -> RunSettings {
        RunSettings {
            train: self.train.clone(),
            generator: self.generator.clone(),
            discriminator: self.discriminator.clone(),
            stft: self.stft.params(),
        }
    }
}
