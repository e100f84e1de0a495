//! Experiment configuration files.
//!
//! A config is a flat TOML table. Unknown keys are rejected.
//!
//! ```toml
//! dataset = "mnist"            # free-form name, or "synthetic"
//! data_dir = "mnist"           # resolved against $SVD_REPLAY_DATA when relative
//! protocol = "rotation"        # or "class_split"
//! method = "agem_gen"          # sgd | agem_raw | agem_gen | er_raw | er_gen
//! samples_per_task = 1000
//! rank = 5
//! learning_rate = 0.1
//! batch_size = 64
//! epochs = 1
//! seeds = [0, 1, 2, 3, 4]
//! output_dir = "out/mnist_rot_agem_gen"
//! precision = "f32"            # default "f64"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::strategies::{Method, StrategyConfig};
use crate::tasks::Protocol;

/// Environment variable holding the root directory for relative `data_dir`s.
pub const DATA_ROOT_ENV: &str = "SVD_REPLAY_DATA";

/// Name of the effective config written into every output directory.
pub const CONFIG_ECHO_FILE: &str = "config.toml";

pub const SYNTHETIC: &str = "synthetic";

/// Scalar type used for training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: String,
    /// Directory with `train-images-idx3-ubyte` and `train-labels-idx1-ubyte`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    pub protocol: Protocol,
    pub method: Method,
    #[serde(default = "defaults::samples_per_task")]
    pub samples_per_task: usize,
    #[serde(default = "defaults::rank")]
    pub rank: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_batch_size: Option<usize>,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::hidden_layers")]
    pub hidden_layers: Vec<usize>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    #[serde(default = "defaults::val_fraction")]
    pub val_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
    /// Use only the first `train_limit` source samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_limit: Option<usize>,
    #[serde(default = "defaults::synthetic_samples")]
    pub synthetic_samples: usize,
    #[serde(default = "defaults::synthetic_pixels")]
    pub synthetic_pixels: usize,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub record_wall_time: bool,
}

mod defaults {
    pub fn samples_per_task() -> usize {
        1000
    }
    pub fn rank() -> usize {
        5
    }
    pub fn learning_rate() -> f64 {
        0.1
    }
    pub fn batch_size() -> usize {
        64
    }
    pub fn epochs() -> usize {
        1
    }
    pub fn hidden_layers() -> Vec<usize> {
        vec![200, 200]
    }
    pub fn val_fraction() -> f64 {
        1.0 / 6.0
    }
    pub fn synthetic_samples() -> usize {
        600
    }
    pub fn synthetic_pixels() -> usize {
        64
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn is_synthetic(&self) -> bool {
        self.dataset == SYNTHETIC
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must list at least one seed".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) || self.val_fraction == 0.0 {
            return Err(Error::Config(format!(
                "val_fraction must lie in (0, 1), got {}",
                self.val_fraction
            )));
        }
        if self.train_limit == Some(0) {
            return Err(Error::Config("train_limit must be positive".into()));
        }
        if self.is_synthetic() {
            if self.synthetic_samples < 20 || self.synthetic_pixels == 0 {
                return Err(Error::Config(
                    "synthetic data needs at least 20 samples and 1 pixel".into(),
                ));
            }
            if self.protocol == Protocol::Rotation && !is_square(self.synthetic_pixels) {
                return Err(Error::Config(
                    "rotation protocol needs a square synthetic_pixels".into(),
                ));
            }
        } else if self.data_dir.is_none() {
            return Err(Error::Config(format!(
                "dataset {:?} needs data_dir",
                self.dataset
            )));
        }
        self.strategy(self.seeds[0]).validate()
    }

    /// Strategy settings for one seed.
    pub fn strategy(&self, seed: u64) -> StrategyConfig {
        StrategyConfig {
            method: self.method,
            samples_per_task: self.samples_per_task,
            rank: self.rank,
            reference_batch_size: self.reference_batch_size,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs_per_task: self.epochs,
            hidden_layers: self.hidden_layers.clone(),
            seed,
            record_wall_time: self.record_wall_time,
        }
    }

    /// `data_dir`, with relative paths taken from `$SVD_REPLAY_DATA` if set.
    pub fn resolved_data_dir(&self) -> Option<PathBuf> {
        let dir = self.data_dir.as_ref()?;
        if dir.is_absolute() {
            return Some(dir.clone());
        }
        Some(match std::env::var_os(DATA_ROOT_ENV) {
            Some(root) => PathBuf::from(root).join(dir),
            None => dir.clone(),
        })
    }
}

fn is_square(n: usize) -> bool {
    let s = (n as f64).sqrt().round() as usize;
    s * s == n
}
