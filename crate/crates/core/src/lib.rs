//! In-context anomaly detection for tabular data.
//!
//! A transformer is pretrained on synthetic anomaly-detection episodes and
//! then labels query rows against an unlabeled context in one forward pass.

pub mod baselines;
pub mod error;
pub mod eval;
pub mod io;
pub mod matrix;
pub mod model;
pub mod ndnum;
pub mod priors;
pub mod scaling;
pub mod train;

pub use baselines::{Method, ScoredResult};
pub use error::{CheckpointError, DatasetError, Error, Result};
pub use eval::{MetricsReport, Scenario, ScenarioKind};
pub use io::RunConfig;
pub use matrix::Matrix;
pub use model::{ModelConfig, ModelParams, Prediction};
pub use priors::{AnomalyKind, Episode, LabeledDataset, PriorConfig, Protocol};
pub use train::{TrainConfig, TrainLog};

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
