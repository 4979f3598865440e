//! Synthetic data-generating prior for pretraining: Gaussian-mixture sources
//! with injected local, cluster or global anomalies, classification sources
//! whose held-out classes act as anomalies, and episode assembly under clean
//! or contaminated context protocols.

mod classification;
mod episode;
mod gmm;

pub use classification::{label_by_classes, sample_classification_episode_source, ClassificationGenerator};
pub use episode::{assemble_episode, episode_rng, sample_pretraining_episode, sample_pretraining_episodes, Episode};
pub use gmm::{
    heldout_gmm_dataset, inject_anomalies, sample_gmm_dataset, sample_gmm_nominal, sample_gmm_spec, GmmSpec,
};

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// One standalone dataset of `n` rows. GMM kinds draw the anomaly rate from
/// `rate`; classification datasets take whatever share the held-out classes
/// receive.
pub fn generate_dataset(
    cfg: &PriorConfig,
    kind: AnomalyKind,
    n: usize,
    rate: RealRange,
    seed: u64,
) -> Result<LabeledDataset> {
    match kind {
        AnomalyKind::ClassBased => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            ClassificationGenerator::sample(cfg, &mut rng).dataset(n, seed, &mut rng)
        }
        _ => heldout_gmm_dataset(cfg, kind, n, rate, seed),
    }
}

/// Seed of the `index`-th dataset of a corpus generated from `seed`.
pub fn corpus_seed(seed: u64, index: u64) -> u64 {
    use rand::RngCore;
    episode_rng(seed, index).next_u64()
}

/// Inclusive integer interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntRange {
    pub lo: usize,
    pub hi: usize,
}

impl IntRange {
    pub const fn new(lo: usize, hi: usize) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, x: usize) -> bool {
        (self.lo..=self.hi).contains(&x)
    }
}

/// Closed real interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealRange {
    pub lo: f64,
    pub hi: f64,
}

impl RealRange {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, x: f64) -> bool {
        (self.lo..=self.hi).contains(&x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Context holds nominal rows only.
    Clean,
    /// Context is contaminated with a sampled fraction of anomalies.
    Noisy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnomalyKind {
    Local,
    Cluster,
    Global,
    ClassBased,
}

impl AnomalyKind {
    pub const GMM_KINDS: [AnomalyKind; 3] = [AnomalyKind::Local, AnomalyKind::Cluster, AnomalyKind::Global];

    pub fn name(self) -> &'static str {
        match self {
            AnomalyKind::Local => "local",
            AnomalyKind::Cluster => "cluster",
            AnomalyKind::Global => "global",
            AnomalyKind::ClassBased => "classbased",
        }
    }
}

impl std::str::FromStr for AnomalyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "local" => Ok(AnomalyKind::Local),
            "cluster" => Ok(AnomalyKind::Cluster),
            "global" => Ok(AnomalyKind::Global),
            "classbased" | "class" | "classification" => Ok(AnomalyKind::ClassBased),
            other => Err(Error::Input(format!("unknown anomaly kind {other:?}"))),
        }
    }
}

/// Parameters of the pretraining prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub prob_gmm: f64,
    pub prob_classification: f64,
    pub dim_range: IntRange,
    pub components_range: IntRange,
    pub classes_range: IntRange,
    /// Covariance inflation (local) and mean shift (cluster) factor.
    pub alpha: f64,
    pub contamination_range: RealRange,
    pub protocol: Protocol,
    pub episode_rows_range: IntRange,
    pub query_size: usize,
    pub seed: u64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            prob_gmm: 0.3,
            prob_classification: 0.7,
            dim_range: IntRange::new(2, 50),
            components_range: IntRange::new(1, 20),
            classes_range: IntRange::new(2, 10),
            alpha: 5.0,
            contamination_range: RealRange::new(0.05, 0.3),
            protocol: Protocol::Noisy,
            episode_rows_range: IntRange::new(200, 1000),
            query_size: 128,
            seed: 0,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.prob_gmm < 0.0 || self.prob_classification < 0.0 {
            return bad("prior mixture weights must be non-negative".into());
        }
        if (self.prob_gmm + self.prob_classification - 1.0).abs() > 1e-9 {
            return bad(format!(
                "prob_gmm + prob_classification = {} (must be 1)",
                self.prob_gmm + self.prob_classification
            ));
        }
        for (name, r) in [
            ("dim_range", self.dim_range),
            ("components_range", self.components_range),
            ("classes_range", self.classes_range),
            ("episode_rows_range", self.episode_rows_range),
        ] {
            if r.lo > r.hi || r.lo == 0 {
                return bad(format!("{name} {r:?} is empty or starts at 0"));
            }
        }
        if self.classes_range.lo < 2 {
            return bad("classification prior needs at least 2 classes".into());
        }
        let c = self.contamination_range;
        if !(c.lo > 0.0 && c.hi < 1.0 && c.lo <= c.hi) {
            return bad(format!("contamination_range {c:?} must lie inside (0, 1)"));
        }
        if self.alpha <= 1.0 {
            return bad(format!("alpha {} must exceed 1", self.alpha));
        }
        if self.query_size < 2 || !self.query_size.is_multiple_of(2) {
            return bad(format!("query_size {} must be even and >= 2", self.query_size));
        }
        if self.episode_rows_range.lo <= self.query_size {
            return bad(format!(
                "episode_rows_range {:?} leaves no room for a context beside {} query rows",
                self.episode_rows_range, self.query_size
            ));
        }
        Ok(())
    }
}

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    /// SHA-256 of the generator's parameters (hex).
    pub spec_hash: String,
    pub seed: u64,
}

/// Feature table with binary ground truth (0 = nominal, 1 = anomaly).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Matrix,
    pub labels: Vec<u8>,
    /// `None` for externally supplied data.
    pub anomaly_kind: Option<AnomalyKind>,
    pub provenance: Provenance,
}

impl LabeledDataset {
    pub fn new(
        features: Matrix,
        labels: Vec<u8>,
        anomaly_kind: Option<AnomalyKind>,
        provenance: Provenance,
    ) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Dimension {
                op: "labeled_dataset",
                lhs: vec![features.rows()],
                rhs: vec![labels.len()],
            });
        }
        if features.rows() == 0 {
            return Err(Error::Input("dataset has no rows".into()));
        }
        if let Some(&l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::Input(format!("label {l} is not 0 or 1")));
        }
        if !features.all_finite() {
            return Err(Error::Numeric("dataset contains non-finite features".into()));
        }
        Ok(Self {
            features,
            labels,
            anomaly_kind,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn anomaly_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn anomaly_rate(&self) -> f64 {
        self.anomaly_count() as f64 / self.len() as f64
    }

    pub fn indices_with_label(&self, label: u8) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == label).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            anomaly_kind: self.anomaly_kind,
            provenance: self.provenance.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        PriorConfig::default().validate().unwrap();
    }

    #[test]
    fn mixture_must_sum_to_one() {
        let cfg = PriorConfig {
            prob_gmm: 0.5,
            ..PriorConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn odd_query_size_rejected() {
        let cfg = PriorConfig {
            query_size: 7,
            ..PriorConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn dataset_rejects_bad_labels() {
        let prov = Provenance {
            generator: "t".into(),
            spec_hash: String::new(),
            seed: 0,
        };
        let m = Matrix::zeros(2, 2);
        assert!(LabeledDataset::new(m.clone(), vec![0, 2], None, prov.clone()).is_err());
        assert!(LabeledDataset::new(m, vec![0], None, prov).is_err());
    }
}
