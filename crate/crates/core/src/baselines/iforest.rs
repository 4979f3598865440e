use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Method, ScoredResult};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::priors::episode_rng;

const EULER_GAMMA: f64 = 0.577_215_664_9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IForestConfig {
    pub trees: usize,
    pub subsample: usize,
}

impl Default for IForestConfig {
    fn default() -> Self {
        Self {
            trees: 100,
            subsample: 256,
        }
    }
}

/// Expected path length `c(m)` of an unsuccessful search in a binary search
/// tree over `m` points.
pub fn average_path_length(m: usize) -> f64 {
    match m {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let m = m as f64;
            2.0 * ((m - 1.0).ln() + EULER_GAMMA) - 2.0 * (m - 1.0) / m
        }
    }
}

enum Node {
    Leaf(usize),
    Split {
        feature: usize,
        value: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

fn build<R: Rng>(x: &Matrix, idx: &mut [usize], depth: usize, cap: usize, rng: &mut R) -> Node {
    if depth >= cap || idx.len() <= 1 {
        return Node::Leaf(idx.len());
    }
    let ranges: Vec<(usize, f64, f64)> = (0..x.cols())
        .filter_map(|j| {
            let (lo, hi) = idx
                .iter()
                .map(|&i| x.get(i, j))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            (hi > lo).then_some((j, lo, hi))
        })
        .collect();
    if ranges.is_empty() {
        return Node::Leaf(idx.len());
    }
    let (feature, lo, hi) = ranges[rng.random_range(0..ranges.len())];
    let value = rng.random_range(lo..hi);
    let mut split = 0;
    for k in 0..idx.len() {
        if x.get(idx[k], feature) < value {
            idx.swap(k, split);
            split += 1;
        }
    }
    let (l, r) = idx.split_at_mut(split);
    Node::Split {
        feature,
        value,
        left: Box::new(build(x, l, depth + 1, cap, rng)),
        right: Box::new(build(x, r, depth + 1, cap, rng)),
    }
}

fn path_length(node: &Node, row: &[f64]) -> f64 {
    let mut node = node;
    let mut depth = 0.0;
    loop {
        match node {
            Node::Leaf(m) => return depth + average_path_length(*m),
            Node::Split {
                feature,
                value,
                left,
                right,
            } => {
                node = if row[*feature] < *value { left } else { right };
                depth += 1.0;
            }
        }
    }
}

/// Isolation forest score `2^(-E[h] / c(ψ))`. Tree `t` draws from stream
/// `(seed, t)`, so results do not depend on thread count.
pub fn iforest_scores(context: &Matrix, queries: &Matrix, cfg: IForestConfig, seed: u64) -> Result<ScoredResult> {
    let n = context.rows();
    if cfg.trees == 0 || cfg.subsample < 2 {
        return Err(Error::Input(format!(
            "iforest needs trees >= 1 and subsample >= 2, got {cfg:?}"
        )));
    }
    if n == 0 {
        return Err(Error::Input("iforest needs context rows".into()));
    }
    if queries.cols() != context.cols() {
        return Err(Error::Dimension {
            op: "iforest_scores",
            lhs: vec![n, context.cols()],
            rhs: vec![queries.rows(), queries.cols()],
        });
    }
    let psi = cfg.subsample.min(n);
    let cap = (psi as f64).log2().ceil().max(1.0) as usize;
    let trees: Vec<Node> = (0..cfg.trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = episode_rng(seed, t as u64);
            let mut idx = rand::seq::index::sample(&mut rng, n, psi).into_vec();
            build(context, &mut idx, 0, cap, &mut rng)
        })
        .collect();
    let c = average_path_length(psi).max(f64::MIN_POSITIVE);
    let score = |x: &Matrix| -> Vec<f64> {
        x.iter_rows()
            .map(|r| {
                let mean = trees.iter().map(|t| path_length(t, r)).sum::<f64>() / trees.len() as f64;
                (2.0f64).powf(-mean / c)
            })
            .collect()
    };
    ScoredResult {
        method: Method::IForest,
        train_scores: score(context),
        query_scores: score(queries),
        fit_params: BTreeMap::from([
            ("trees".to_string(), cfg.trees as f64),
            ("subsample".to_string(), psi as f64),
        ]),
    }
    .checked(n, queries.rows())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn harmonic_constants() {
        assert_eq!(average_path_length(2), 1.0);
        let c = average_path_length(256);
        assert_eq!((2.0f64).powf(-c / c), 0.5);
    }

    #[test]
    fn far_outlier_beats_median_context_score() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..300)
                .map(|_| (0..3).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
                .collect();
            let ctx = Matrix::from_rows(&rows).unwrap();
            let q = Matrix::from_rows(&[vec![8.0, -8.0, 8.0]]).unwrap();
            let r = iforest_scores(&ctx, &q, IForestConfig::default(), seed).unwrap();
            let median = crate::baselines::quantile(&r.train_scores, 0.5).unwrap();
            assert!(r.query_scores[0] > median);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let ctx = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0], vec![2.0, 2.0], vec![0.5, 0.1]]).unwrap();
        let a = iforest_scores(&ctx, &ctx, IForestConfig::default(), 3).unwrap();
        let b = iforest_scores(&ctx, &ctx, IForestConfig::default(), 3).unwrap();
        assert_eq!(a, b);
    }
}
