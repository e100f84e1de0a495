use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sgd,
    AgemRaw,
    AgemGen,
    ErRaw,
    ErGen,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Sgd,
        Method::AgemRaw,
        Method::AgemGen,
        Method::ErRaw,
        Method::ErGen,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Sgd => "sgd",
            Method::AgemRaw => "agem_raw",
            Method::AgemGen => "agem_gen",
            Method::ErRaw => "er_raw",
            Method::ErGen => "er_gen",
        }
    }

    pub fn uses_memory(self) -> bool {
        self != Method::Sgd
    }

    pub fn uses_generator(self) -> bool {
        matches!(self, Method::AgemGen | Method::ErGen)
    }

    pub fn is_agem(self) -> bool {
        matches!(self, Method::AgemRaw | Method::AgemGen)
    }

    pub fn is_er(self) -> bool {
        matches!(self, Method::ErRaw | Method::ErGen)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// Hyper-parameters of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct StrategyConfig {
    pub method: Method,
    /// Samples drawn from each finished task for the memory (`s`).
    pub samples_per_task: usize,
    /// Generator rank (`r`).
    pub rank: usize,
    /// Reference/replay batch size (`n`); `None` means "same as `batch_size`".
    pub reference_batch_size: Option<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs_per_task: usize,
    pub hidden_layers: Vec<usize>,
    pub seed: u64,
    /// Store wall-clock time in the run records; off keeps traces reproducible.
    pub record_wall_time: bool,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            method: Method::Sgd,
            samples_per_task: 1000,
            rank: 5,
            reference_batch_size: None,
            learning_rate: 0.1,
            batch_size: 64,
            epochs_per_task: 1,
            hidden_layers: vec![200, 200],
            seed: 0,
            record_wall_time: false,
        }
    }
}

impl StrategyConfig {
    pub fn reference_batch_size(&self) -> usize {
        self.reference_batch_size.unwrap_or(self.batch_size)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.epochs_per_task == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if self.method.uses_memory() && self.samples_per_task == 0 {
            return Err(Error::Config("samples_per_task must be positive".into()));
        }
        if self.method.uses_generator() && self.rank == 0 {
            return Err(Error::Config("rank must be positive".into()));
        }
        if self.hidden_layers.iter().any(|&h| h == 0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        Ok(())
    }

    /// Method name qualified by its memory setting, e.g. `agem_raw_51`, `er_gen_r5`.
    pub fn label(&self) -> String {
        match self.method {
            Method::Sgd => "sgd".to_string(),
            Method::AgemRaw | Method::ErRaw => {
                format!("{}_{}", self.method.as_str(), self.samples_per_task)
            }
            Method::AgemGen | Method::ErGen => format!("{}_r{}", self.method.as_str(), self.rank),
        }
    }
}
