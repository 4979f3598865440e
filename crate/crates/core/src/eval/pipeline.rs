use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::priors::{Episode, LabeledDataset};

pub const MAX_ROWS: usize = 10_000;
pub const MIN_ROWS: usize = 1_000;
/// Anomaly rate above which the clean split switches from 7:3 to 6:4.
pub const CLEAN_RATE_CUTOFF: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Clean,
    Noisy,
    #[serde(rename = "levelk")]
    LevelK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub kind: ScenarioKind,
    /// Context anomaly percentage for `LevelK`.
    pub k_percent: Option<f64>,
    pub seeds: Vec<u64>,
    pub methods: Vec<String>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::Noisy,
            k_percent: None,
            seeds: (0..5).collect(),
            methods: ["knn", "pca", "iforest", "tactic"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

impl Scenario {
    pub fn new(kind: ScenarioKind, k_percent: Option<f64>) -> Self {
        Self {
            kind,
            k_percent,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("scenario needs at least one seed".into()));
        }
        match (self.kind, self.k_percent) {
            (ScenarioKind::LevelK, None) => Err(Error::Config("level-k scenario needs k_percent".into())),
            (ScenarioKind::LevelK, Some(k)) if !(0.0..100.0).contains(&k) => {
                Err(Error::Config(format!("k_percent {k} outside [0, 100)")))
            }
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        match self.kind {
            ScenarioKind::Clean => "clean".into(),
            ScenarioKind::Noisy => "noisy".into(),
            ScenarioKind::LevelK => format!("level{}", self.k_percent.unwrap_or(0.0)),
        }
    }
}

fn stratified_counts(n_nom: usize, n_anom: usize, target: usize) -> (usize, usize) {
    let rate = n_anom as f64 / (n_nom + n_anom) as f64;
    let anom = ((target as f64 * rate).round() as usize).clamp(1, target - 1);
    (target - anom, anom)
}

/// Subsamples above 10000 rows and oversamples below 1000, per label.
/// Oversampling keeps every original row and adds draws with replacement.
pub fn adjust_size<R: Rng>(raw: &LabeledDataset, rng: &mut R) -> LabeledDataset {
    let n = raw.len();
    if (MIN_ROWS..=MAX_ROWS).contains(&n) {
        return raw.clone();
    }
    let nom = raw.indices_with_label(0);
    let anom = raw.indices_with_label(1);
    let target = if n > MAX_ROWS { MAX_ROWS } else { MIN_ROWS };
    let (t_nom, t_anom) = stratified_counts(nom.len(), anom.len(), target);
    let pick = |pool: &[usize], k: usize, rng: &mut R| -> Vec<usize> {
        if k <= pool.len() {
            pool.choose_multiple(rng, k).copied().collect()
        } else {
            let mut out = pool.to_vec();
            out.extend((0..k - pool.len()).map(|_| *pool.choose(rng).expect("non-empty stratum")));
            out
        }
    };
    let mut idx = pick(&nom, t_nom, rng);
    idx.extend(pick(&anom, t_anom, rng));
    idx.sort_unstable();
    raw.subset(&idx)
}

fn split_stratum<R: Rng>(pool: &mut Vec<usize>, ctx_fraction: f64, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    pool.shuffle(rng);
    let k = (pool.len() as f64 * ctx_fraction).round() as usize;
    let q = pool.split_off(k);
    (std::mem::take(pool), q)
}

/// Context and query row indices before scaling.
pub fn split_indices<R: Rng>(
    ds: &LabeledDataset,
    scenario: &Scenario,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut nom = ds.indices_with_label(0);
    let mut anom = ds.indices_with_label(1);
    if nom.is_empty() || anom.is_empty() {
        return Err(Error::Input("benchmark datasets need both classes".into()));
    }
    let level = match scenario.kind {
        ScenarioKind::LevelK => scenario
            .k_percent
            .ok_or_else(|| Error::Config("level-k needs k_percent".into()))?,
        _ => -1.0,
    };
    if scenario.kind == ScenarioKind::Clean || level == 0.0 {
        let ratio = if ds.anomaly_rate() <= CLEAN_RATE_CUTOFF {
            0.7
        } else {
            0.6
        };
        let (ctx, mut query) = split_stratum(&mut nom, ratio, rng);
        query.extend(anom);
        return Ok((ctx, query));
    }
    let (ctx_nom, mut query) = split_stratum(&mut nom, 0.7, rng);
    let (mut ctx_anom, q_anom) = split_stratum(&mut anom, 0.7, rng);
    query.extend(q_anom);
    if scenario.kind == ScenarioKind::LevelK {
        let k = level / 100.0;
        let have = ctx_anom.len() as f64 / (ctx_nom.len() + ctx_anom.len()) as f64;
        if have < k {
            return Err(Error::Skip(format!(
                "context anomaly rate {:.2}% below level {level}%",
                100.0 * have
            )));
        }
        let keep = ((k * ctx_nom.len() as f64) / (1.0 - k)).round() as usize;
        ctx_anom.truncate(keep.min(ctx_anom.len()));
    }
    let mut ctx = ctx_nom;
    ctx.extend(ctx_anom);
    Ok((ctx, query))
}

/// Size adjustment, scenario split and context-fitted `[-1, 1]` scaling.
pub fn adbench_pipeline<R: Rng>(raw: &LabeledDataset, scenario: &Scenario, rng: &mut R) -> Result<Episode> {
    scenario.validate()?;
    let ds = adjust_size(raw, rng);
    let (mut ctx, mut query) = split_indices(&ds, scenario, rng)?;
    if ctx.is_empty() || query.is_empty() {
        return Err(Error::Input("split left an empty side".into()));
    }
    ctx.shuffle(rng);
    query.shuffle(rng);
    let labels = |idx: &[usize]| idx.iter().map(|&i| ds.labels[i]).collect::<Vec<u8>>();
    let mut ep = Episode::new(
        ds.features.select_rows(&ctx),
        ds.features.select_rows(&query),
        labels(&query),
        Some(labels(&ctx)),
    )?;
    ep.kind = ds.anomaly_kind;
    Ok(ep.scaled_to_context())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::priors::{episode_rng, Provenance};

    fn dataset(n: usize, anomalies: usize) -> LabeledDataset {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64, (i % 7) as f64]).collect();
        let mut labels = vec![0u8; n - anomalies];
        labels.extend(std::iter::repeat_n(1, anomalies));
        let prov = Provenance {
            generator: "test".into(),
            spec_hash: String::new(),
            seed: 0,
        };
        LabeledDataset::new(Matrix::from_rows(&rows).unwrap(), labels, None, prov).unwrap()
    }

    #[test]
    fn small_dataset_oversampled_to_minimum() {
        let ds = adjust_size(&dataset(683, 239), &mut episode_rng(0, 0));
        assert_eq!(ds.len(), 1000);
        assert_eq!(ds.anomaly_count(), 350);
    }

    #[test]
    fn large_dataset_subsampled_stratified() {
        let ds = adjust_size(&dataset(12_000, 1200), &mut episode_rng(0, 0));
        assert_eq!(ds.len(), 10_000);
        assert_eq!(ds.anomaly_count(), 1000);
    }

    #[test]
    fn clean_split_uses_six_four_above_cutoff() {
        let ds = dataset(1000, 350);
        let (ctx, q) = split_indices(&ds, &Scenario::new(ScenarioKind::Clean, None), &mut episode_rng(1, 0)).unwrap();
        assert_eq!(ctx.len(), 390);
        assert!(ctx.iter().all(|&i| ds.labels[i] == 0));
        assert_eq!(q.len(), 610);
        let ds = dataset(1000, 100);
        let (ctx, _) = split_indices(&ds, &Scenario::new(ScenarioKind::Clean, None), &mut episode_rng(1, 0)).unwrap();
        assert_eq!(ctx.len(), 630);
    }

    #[test]
    fn noisy_split_preserves_rate() {
        let ds = dataset(1000, 150);
        let (ctx, q) = split_indices(&ds, &Scenario::new(ScenarioKind::Noisy, None), &mut episode_rng(2, 0)).unwrap();
        let a = ctx.iter().filter(|&&i| ds.labels[i] == 1).count();
        assert_eq!((ctx.len(), a), (700, 105));
        assert_eq!(q.len(), 300);
    }

    #[test]
    fn level_k_hits_exact_rate_and_skips() {
        let ds = dataset(1000, 150);
        let (ctx, q) = split_indices(
            &ds,
            &Scenario::new(ScenarioKind::LevelK, Some(10.0)),
            &mut episode_rng(3, 0),
        )
        .unwrap();
        let a = ctx.iter().filter(|&&i| ds.labels[i] == 1).count();
        assert!((a as f64 / ctx.len() as f64 - 0.10).abs() < 1.0 / ctx.len() as f64);
        assert_eq!(q.len(), 300);
        let err = split_indices(
            &ds,
            &Scenario::new(ScenarioKind::LevelK, Some(20.0)),
            &mut episode_rng(3, 0),
        );
        assert!(matches!(err, Err(Error::Skip(_))));
    }

    #[test]
    fn scaling_uses_context_only() {
        let ds = dataset(1000, 100);
        let sc = Scenario::new(ScenarioKind::Noisy, None);
        let ep = adbench_pipeline(&ds, &sc, &mut episode_rng(4, 0)).unwrap();
        for j in 0..ep.d {
            let col = ep.context.column(j);
            let (lo, hi) = col.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
            assert_eq!((lo, hi), (-1.0, 1.0));
        }
    }
}
