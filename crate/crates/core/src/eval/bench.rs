use std::collections::BTreeMap;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{auc_roc, f1_score, rank_methods, Ranking};
use super::pipeline::{adbench_pipeline, Scenario};
use crate::baselines::{score_baseline, threshold_scores, Method};
use crate::error::{Error, Result};
use crate::model::{predict, ModelParams};
use crate::priors::{episode_rng, Episode, LabeledDataset};

/// Decision threshold on the transformer's anomaly probability.
pub const TACTIC_THRESHOLD: f64 = 0.5;
/// Upper bound on the contamination passed to quantile thresholding.
const MAX_CONTAMINATION: f64 = 0.499;

#[derive(Debug, Clone)]
pub struct BenchDataset {
    pub name: String,
    pub data: LabeledDataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub dataset: String,
    pub method: String,
    pub seed: u64,
    pub aucroc: Option<f64>,
    pub f1: Option<f64>,
    /// Failure message when the method errored on this cell.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodAggregate {
    pub method: String,
    pub cells: usize,
    pub failed: usize,
    pub mean_aucroc: Option<f64>,
    pub mean_f1: Option<f64>,
    pub mean_rank_aucroc: Option<f64>,
    pub median_rank_aucroc: Option<f64>,
    pub mean_rank_f1: Option<f64>,
    pub median_rank_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: Scenario,
    pub config_hash: String,
    /// Seconds since the Unix epoch; excluded from reproducibility checks.
    pub timestamp: u64,
    pub cells: Vec<CellResult>,
    pub aggregates: Vec<MethodAggregate>,
    pub ranking_aucroc: Option<Ranking>,
    pub ranking_f1: Option<Ranking>,
    /// Datasets dropped by the level-k rule.
    pub skipped: Vec<String>,
}

impl MetricsReport {
    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.error.is_some()).count()
    }

    pub fn aggregate(&self, method: &str) -> Option<&MethodAggregate> {
        self.aggregates.iter().find(|a| a.method == method)
    }

    /// The report with its timestamp zeroed, for comparisons.
    pub fn payload(&self) -> MetricsReport {
        MetricsReport {
            timestamp: 0,
            ..self.clone()
        }
    }
}

fn method_stream(method: Method) -> u64 {
    match method {
        Method::Knn => 1,
        Method::Pca => 2,
        Method::IForest => 3,
        Method::Tactic => 4,
    }
}

fn run_cell(
    method: Method,
    episode: &Episode,
    contamination: f64,
    params: Option<&ModelParams<f32>>,
    seed: u64,
) -> Result<(f64, f64)> {
    if method == Method::Tactic {
        let params = params.ok_or_else(|| Error::Config("tactic selected without a checkpoint".into()))?;
        if episode.d > params.config().d_max {
            return Err(Error::Input(format!(
                "dataset has {} features, model accepts at most {}",
                episode.d,
                params.config().d_max
            )));
        }
        let p = predict(episode, params, TACTIC_THRESHOLD)?;
        let auc = auc_roc(&p.anomaly_scores(), &episode.query_labels)?;
        return Ok((auc, f1_score(&p.labels, &episode.query_labels)?));
    }
    let scored = score_baseline(method, &episode.context, &episode.query, seed)?;
    let auc = auc_roc(&scored.query_scores, &episode.query_labels)?;
    let pred = threshold_scores(&scored, contamination.clamp(f64::MIN_POSITIVE, MAX_CONTAMINATION))?;
    Ok((auc, f1_score(&pred, &episode.query_labels)?))
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn rank_metric(
    cells: &[CellResult],
    methods: &[String],
    datasets: &[String],
    pick: impl Fn(&CellResult) -> Option<f64>,
) -> Option<Ranking> {
    let mut table: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for d in datasets {
        for m in methods {
            if let Some(v) = mean(
                cells
                    .iter()
                    .filter(|c| &c.dataset == d && &c.method == m)
                    .filter_map(&pick),
            ) {
                table.entry(d.clone()).or_default().insert(m.clone(), v);
            }
        }
    }
    let complete: Vec<String> = methods
        .iter()
        .filter(|m| {
            datasets
                .iter()
                .all(|d| table.get(d).is_some_and(|r| r.contains_key(*m)))
        })
        .cloned()
        .collect();
    if complete.is_empty() || table.is_empty() {
        return None;
    }
    rank_methods(&table, &complete).ok()
}

/// 56-bit stream index derived from a dataset name, so a cell's randomness
/// does not depend on the dataset's position in the run.
fn dataset_stream(name: &str) -> u64 {
    let hex = crate::sha256_hex(name.as_bytes());
    u64::from_str_radix(&hex[..14], 16).expect("hex digest")
}

/// Runs every (dataset, seed, method) cell. A failing cell is recorded and
/// the run continues; datasets skipped by the level-k rule are listed.
pub fn run_benchmark(
    datasets: &[BenchDataset],
    scenario: &Scenario,
    params: Option<&ModelParams<f32>>,
    config_hash: &str,
) -> Result<MetricsReport> {
    scenario.validate()?;
    let methods: Vec<Method> = scenario.methods.iter().map(|m| m.parse()).collect::<Result<_>>()?;
    if methods.contains(&Method::Tactic) && params.is_none() {
        return Err(Error::Config("method tactic needs a checkpoint".into()));
    }
    let jobs: Vec<(usize, u64)> = (0..datasets.len())
        .flat_map(|d| scenario.seeds.iter().map(move |&s| (d, s)))
        .collect();
    let outcomes: Vec<std::result::Result<Vec<CellResult>, String>> = jobs
        .par_iter()
        .map(|&(di, seed)| {
            let ds = &datasets[di];
            let episode = match adbench_pipeline(&ds.data, scenario, &mut episode_rng(seed, dataset_stream(&ds.name))) {
                Ok(ep) => ep,
                Err(Error::Skip(msg)) => return Err(msg),
                Err(e) => {
                    return Ok(methods
                        .iter()
                        .map(|m| CellResult {
                            dataset: ds.name.clone(),
                            method: m.name().into(),
                            seed,
                            aucroc: None,
                            f1: None,
                            error: Some(e.to_string()),
                        })
                        .collect())
                }
            };
            let contamination = ds.data.anomaly_rate();
            Ok(methods
                .iter()
                .map(|&m| {
                    let cell_seed = episode_rng(seed, (dataset_stream(&ds.name) << 8) | method_stream(m)).next_u64();
                    let r = run_cell(m, &episode, contamination, params, cell_seed);
                    if let Err(e) = &r {
                        log::warn!("{} / {} / seed {seed}: {e}", ds.name, m);
                    }
                    CellResult {
                        dataset: ds.name.clone(),
                        method: m.name().into(),
                        seed,
                        aucroc: r.as_ref().ok().map(|v| v.0),
                        f1: r.as_ref().ok().map(|v| v.1),
                        error: r.err().map(|e| e.to_string()),
                    }
                })
                .collect())
        })
        .collect();

    let mut cells = Vec::new();
    let mut skipped = Vec::new();
    for ((di, _), out) in jobs.iter().zip(outcomes) {
        match out {
            Ok(c) => cells.extend(c),
            Err(msg) => {
                let name = &datasets[*di].name;
                if !skipped.contains(name) {
                    log::info!("skipping {name}: {msg}");
                    skipped.push(name.clone());
                }
            }
        }
    }
    // A dataset counts as skipped only if every seed skipped it.
    skipped.retain(|n| !cells.iter().any(|c| &c.dataset == n));
    cells.retain(|c| !skipped.contains(&c.dataset));

    let names: Vec<String> = methods.iter().map(|m| m.name().to_string()).collect();
    let ds_names: Vec<String> = datasets
        .iter()
        .map(|d| d.name.clone())
        .filter(|n| !skipped.contains(n))
        .collect();
    let ranking_aucroc = rank_metric(&cells, &names, &ds_names, |c| c.aucroc);
    let ranking_f1 = rank_metric(&cells, &names, &ds_names, |c| c.f1);
    let aggregates = names
        .iter()
        .map(|m| {
            let mine: Vec<&CellResult> = cells.iter().filter(|c| &c.method == m).collect();
            let rank = |r: &Option<Ranking>, median: bool| {
                r.as_ref()
                    .and_then(|r| {
                        if median {
                            r.median_rank.get(m)
                        } else {
                            r.mean_rank.get(m)
                        }
                    })
                    .copied()
            };
            MethodAggregate {
                method: m.clone(),
                cells: mine.len(),
                failed: mine.iter().filter(|c| c.error.is_some()).count(),
                mean_aucroc: mean(mine.iter().filter_map(|c| c.aucroc)),
                mean_f1: mean(mine.iter().filter_map(|c| c.f1)),
                mean_rank_aucroc: rank(&ranking_aucroc, false),
                median_rank_aucroc: rank(&ranking_aucroc, true),
                mean_rank_f1: rank(&ranking_f1, false),
                median_rank_f1: rank(&ranking_f1, true),
            }
        })
        .collect();
    let timestamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    Ok(MetricsReport {
        scenario: scenario.clone(),
        config_hash: config_hash.to_string(),
        timestamp,
        cells,
        aggregates,
        ranking_aucroc,
        ranking_f1,
        skipped,
    })
}
