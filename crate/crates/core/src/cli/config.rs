use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aai::AaiConfig;
use crate::preprocess::{window_len, NoiseKind};
use crate::synthdata::{CorpusConfig, MANIFEST_FILE};
use crate::{Error, Result};

pub const DATA_DIR_ENV: &str = "AAI_DATA_DIR";

/// Noise conditions evaluated in addition to clean speech.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    pub white: Vec<f64>,
    pub babble: Vec<f64>,
    pub seed: u64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        let snrs = vec![0.0, 5.0, 10.0, 15.0, 20.0];
        Self {
            white: snrs.clone(),
            babble: snrs,
            seed: 1234,
        }
    }
}

impl SweepSpec {
    pub fn clean_only() -> Self {
        Self {
            white: Vec::new(),
            babble: Vec::new(),
            ..Self::default()
        }
    }

    /// `(kind, snr)` pairs in evaluation order.
    pub fn conditions(&self) -> Vec<(NoiseKind, f64)> {
        let white = self.white.iter().map(|&s| (NoiseKind::White, s));
        let babble = self.babble.iter().map(|&s| (NoiseKind::Babble, s));
        white.chain(babble).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Corpus root; defaults to `$AAI_DATA_DIR`, then `data`.
    pub data_dir: Option<PathBuf>,
    /// Defaults to `<data_dir>/manifest.csv`.
    pub manifest: Option<PathBuf>,
    /// Defaults to `out`.
    pub out_dir: Option<PathBuf>,
    /// Defaults to `<out_dir>/checkpoint.json`.
    pub checkpoint: Option<PathBuf>,
}

/// Full experiment configuration. Every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub rate: f64,
    pub window_ms: f64,
    pub train_stride: usize,
    /// Stride of the inference windows; 1 averages every window.
    pub infer_stride: usize,
    /// EGG windows with energy at or below this are dropped from training.
    pub min_frame_energy: f64,
    pub model: AaiConfig,
    pub corpus: CorpusConfig,
    pub sweep: SweepSpec,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            rate: crate::signal_io::DEFAULT_RATE,
            window_ms: 12.0,
            train_stride: 16,
            infer_stride: 1,
            min_frame_energy: 1e-6,
            model: AaiConfig::default(),
            corpus: CorpusConfig::default(),
            sweep: SweepSpec::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Copy the shared seed and rate into the nested sections and check
    /// consistency.
    pub fn resolved(mut self) -> Result<Self> {
        self.model.seed = self.seed;
        self.corpus.seed = self.seed;
        self.corpus.rate = self.rate;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.corpus.validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.rate > 0.0) || !(self.window_ms > 0.0) {
            return Err(Error::Config("rate and window_ms must be positive".into()));
        }
        if self.train_stride == 0 || self.infer_stride == 0 {
            return Err(Error::Config("strides must be at least 1".into()));
        }
        let w = window_len(self.rate, self.window_ms);
        if w != self.model.window_len() {
            return Err(Error::Config(format!(
                "window of {} ms at {} Hz is {w} samples but the encoder takes {}",
                self.window_ms,
                self.rate,
                self.model.window_len()
            )));
        }
        Ok(())
    }

    pub fn data_dir(&self) -> PathBuf {
        self.paths
            .data_dir
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data"))
    }

    pub fn manifest(&self) -> PathBuf {
        self.paths.manifest.clone().unwrap_or_else(|| self.data_dir().join(MANIFEST_FILE))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.paths.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.paths.checkpoint.clone().unwrap_or_else(|| self.out_dir().join("checkpoint.json"))
    }
}
