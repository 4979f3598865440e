//! Classical score-based detectors. Each is fit on the context rows only and
//! scores both the context (train scores) and the queries.

mod iforest;
mod knn;
mod pca;

pub use iforest::{average_path_length, iforest_scores, IForestConfig};
pub use knn::knn_scores;
pub use pca::{default_components, pca_scores};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const DEFAULT_K: usize = 5;

/// Scores where higher means more anomalous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredResult {
    pub method: Method,
    pub train_scores: Vec<f64>,
    pub query_scores: Vec<f64>,
    pub fit_params: BTreeMap<String, f64>,
}

impl ScoredResult {
    fn checked(self, n_ctx: usize, n_q: usize) -> Result<Self> {
        if self.train_scores.len() != n_ctx || self.query_scores.len() != n_q {
            return Err(Error::Internal(format!("{} produced misaligned scores", self.method)));
        }
        if self
            .train_scores
            .iter()
            .chain(&self.query_scores)
            .any(|s| !s.is_finite())
        {
            return Err(Error::Numeric(format!("{} produced non-finite scores", self.method)));
        }
        Ok(self)
    }
}

/// Detector identifiers accepted on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Knn,
    Pca,
    #[serde(rename = "iforest")]
    IForest,
    /// The pretrained in-context transformer.
    Tactic,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Knn, Method::Pca, Method::IForest, Method::Tactic];

    pub fn name(self) -> &'static str {
        match self {
            Method::Knn => "knn",
            Method::Pca => "pca",
            Method::IForest => "iforest",
            Method::Tactic => "tactic",
        }
    }

    pub fn is_baseline(self) -> bool {
        self != Method::Tactic
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Input(format!("unknown method {s:?} (expected knn, pca, iforest or tactic)")))
    }
}

/// Runs a baseline with its default hyperparameters.
pub fn score_baseline(method: Method, context: &Matrix, queries: &Matrix, seed: u64) -> Result<ScoredResult> {
    match method {
        Method::Knn => knn_scores(context, queries, DEFAULT_K.min(context.rows().saturating_sub(1)).max(1)),
        Method::Pca => pca_scores(context, queries, None),
        Method::IForest => iforest_scores(context, queries, IForestConfig::default(), seed),
        Method::Tactic => Err(Error::Input("tactic is not a score baseline".into())),
    }
}

/// Linear-interpolation empirical quantile of `values` at `q ∈ [0, 1]`.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Input("quantile of an empty sample".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

/// Labels a query 1 when its score exceeds the `(1 - contamination)`
/// quantile of the train scores.
pub fn threshold_scores(result: &ScoredResult, contamination: f64) -> Result<Vec<u8>> {
    if !(contamination > 0.0 && contamination < 0.5) {
        return Err(Error::Input(format!("contamination {contamination} outside (0, 0.5)")));
    }
    let t = quantile(&result.train_scores, 1.0 - contamination)?;
    Ok(result.query_scores.iter().map(|&s| u8::from(s > t)).collect())
}
