use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{Method, ScoredResult};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Distance from `row` to its `k`-th nearest context row, skipping `skip`.
fn kth_distance(context: &Matrix, row: &[f64], k: usize, skip: Option<usize>) -> f64 {
    let mut d: Vec<f64> = context
        .iter_rows()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .map(|(_, c)| dist(c, row))
        .collect();
    let (_, kth, _) = d.select_nth_unstable_by(k - 1, f64::total_cmp);
    *kth
}

/// Euclidean k-th nearest neighbour distance. Train scores exclude the row
/// itself.
pub fn knn_scores(context: &Matrix, queries: &Matrix, k: usize) -> Result<ScoredResult> {
    let n = context.rows();
    if k == 0 || k > n {
        return Err(Error::Input(format!("k = {k} needs 1 <= k <= {n} context rows")));
    }
    if queries.cols() != context.cols() {
        return Err(Error::Dimension {
            op: "knn_scores",
            lhs: vec![n, context.cols()],
            rhs: vec![queries.rows(), queries.cols()],
        });
    }
    // With a single context row there is no other row to compare against.
    let train_k = k.min(n.saturating_sub(1));
    let train_scores = (0..n)
        .into_par_iter()
        .map(|i| {
            if train_k == 0 {
                0.0
            } else {
                kth_distance(context, context.row(i), train_k, Some(i))
            }
        })
        .collect();
    let query_scores = (0..queries.rows())
        .into_par_iter()
        .map(|i| kth_distance(context, queries.row(i), k, None))
        .collect();
    ScoredResult {
        method: Method::Knn,
        train_scores,
        query_scores,
        fit_params: BTreeMap::from([("k".to_string(), k as f64)]),
    }
    .checked(n, queries.rows())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(xs: &[f64]) -> Matrix {
        Matrix::from_rows(&xs.iter().map(|&x| vec![x]).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn line_examples() {
        let ctx = line(&[0.0, 1.0, 2.0]);
        assert_eq!(knn_scores(&ctx, &line(&[10.0]), 1).unwrap().query_scores, vec![8.0]);
        assert_eq!(knn_scores(&ctx, &line(&[10.0]), 2).unwrap().query_scores, vec![9.0]);
        assert_eq!(knn_scores(&ctx, &line(&[1.0]), 1).unwrap().query_scores, vec![0.0]);
    }

    #[test]
    fn train_scores_exclude_self() {
        let r = knn_scores(&line(&[0.0, 1.0, 3.0]), &line(&[0.0]), 1).unwrap();
        assert_eq!(r.train_scores, vec![1.0, 1.0, 2.0]);
    }

    #[test]
    fn k_larger_than_context_rejected() {
        assert!(knn_scores(&line(&[0.0, 1.0]), &line(&[0.0]), 3).is_err());
    }
}
