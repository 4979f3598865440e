use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Scenario;
use crate::model::ModelConfig;
use crate::priors::PriorConfig;
use crate::train::TrainConfig;

/// Optimisation schedule; the prior and model come from [`RunConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub steps: u64,
    pub lr0: f64,
    pub batch_episodes: usize,
    pub grad_accum: usize,
    pub checkpoint_every: u64,
    pub log_every: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            steps: t.steps,
            lr0: t.lr0,
            batch_episodes: t.batch_episodes,
            grad_accum: t.grad_accum,
            checkpoint_every: t.checkpoint_every,
            log_every: t.log_every,
        }
    }
}

/// Every setting of a run, read from one JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub prior: PriorConfig,
    pub model: ModelConfig,
    pub train: Schedule,
    pub scenario: Scenario,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::desk();
        let mut prior = PriorConfig::default();
        prior.dim_range.hi = prior.dim_range.hi.min(model.d_max);
        Self {
            seed: 0,
            prior,
            model,
            train: Schedule::default(),
            scenario: Scenario::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Applies a seed override to every seeded component.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.prior.seed = seed;
        self
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            steps: self.train.steps,
            lr0: self.train.lr0,
            batch_episodes: self.train.batch_episodes,
            grad_accum: self.train.grad_accum,
            prior: self.prior.clone(),
            model: self.model.clone(),
            checkpoint_every: self.train.checkpoint_every,
            seed: self.seed,
            log_every: self.train.log_every,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.prior.validate()?;
        self.model.validate()?;
        self.scenario.validate()?;
        self.train_config().validate()
    }

    /// SHA-256 of the canonical JSON serialisation (keys sorted).
    pub fn config_hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        crate::sha256_hex(value.to_string().as_bytes())
    }
}
