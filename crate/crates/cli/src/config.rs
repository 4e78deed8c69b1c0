//! The JSON configuration file. Every section is optional and falls back to
//! its defaults; unknown keys are rejected.

use std::path::{Path, PathBuf};

use authorship_core::classifier::KnnConfig;
use authorship_core::encoder::HashEncoder;
use authorship_core::loss::LossConfig;
use authorship_core::model::ModelDims;
use authorship_core::synth::SynthConfig;
use authorship_core::trainer::TrainConfig;
use authorship_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    /// Precomputed base embeddings; when absent the hashed n-gram encoder is
    /// used.
    pub embeddings: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub index: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    /// `input_dim` is always taken from the base embeddings.
    pub model: ModelDims,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub encoder: HashEncoder,
    pub knn: KnnConfig,
    pub synth: SynthConfig,
    pub paths: Paths,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 42,
            model: ModelDims::default(),
            train: TrainConfig::default(),
            loss: LossConfig::default(),
            encoder: HashEncoder::default(),
            knn: KnnConfig::default(),
            synth: SynthConfig::default(),
            paths: Paths::default(),
        }
    }
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: Config = serde_json::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        cfg.set_seed(cfg.seed);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        self.synth.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.loss.validate()?;
        self.encoder.validate()?;
        self.knn.validate()?;
        self.synth.validate()?;
        Ok(())
    }
}
