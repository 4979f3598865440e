use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};

use super::{Method, ScoredResult};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Share of variance the default component count must cover.
pub const VARIANCE_COVERAGE: f64 = 0.9;

struct Fit {
    mean: Vec<f64>,
    /// Unit principal directions, descending eigenvalue.
    directions: Vec<Vec<f64>>,
    eigenvalues: Vec<f64>,
}

fn fit(context: &Matrix) -> Result<Fit> {
    let (n, d) = (context.rows(), context.cols());
    if n < 2 {
        return Err(Error::Input("pca needs at least 2 context rows".into()));
    }
    let mean = context.column_means();
    let cov = context.covariance();
    let sym = DMatrix::from_fn(d, d, |i, j| cov[i][j]);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut directions = Vec::with_capacity(d);
    let mut eigenvalues = Vec::with_capacity(d);
    for &k in &order {
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let pivot = v.iter().enumerate().fold(
            (0, 0.0f64),
            |best, (i, &x)| {
                if x.abs() > best.1.abs() {
                    (i, x)
                } else {
                    best
                }
            },
        );
        if pivot.1 < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        directions.push(v);
        eigenvalues.push(eig.eigenvalues[k].max(0.0));
    }
    Ok(Fit {
        mean,
        directions,
        eigenvalues,
    })
}

/// Fewest leading components covering 90% of the variance, capped at `d - 1`.
pub fn default_components(eigenvalues_desc: &[f64]) -> usize {
    let d = eigenvalues_desc.len();
    let total: f64 = eigenvalues_desc.iter().sum();
    let mut acc = 0.0;
    let mut m = d;
    if total > 0.0 {
        for (i, &l) in eigenvalues_desc.iter().enumerate() {
            acc += l;
            if acc >= VARIANCE_COVERAGE * total {
                m = i + 1;
                break;
            }
        }
    } else {
        m = 1;
    }
    m.clamp(1, d.saturating_sub(1).max(1))
}

fn residual_sq(f: &Fit, row: &[f64], m: usize) -> f64 {
    let centered: Vec<f64> = row.iter().zip(&f.mean).map(|(x, mu)| x - mu).collect();
    let mut resid = centered.clone();
    for dir in &f.directions[..m] {
        let p: f64 = centered.iter().zip(dir).map(|(a, b)| a * b).sum();
        resid.iter_mut().zip(dir).for_each(|(r, v)| *r -= p * v);
    }
    resid.iter().map(|r| r * r).sum()
}

/// Squared reconstruction residual after projecting onto the leading
/// `components` principal directions of the context.
pub fn pca_scores(context: &Matrix, queries: &Matrix, components: Option<usize>) -> Result<ScoredResult> {
    let d = context.cols();
    if queries.cols() != d {
        return Err(Error::Dimension {
            op: "pca_scores",
            lhs: vec![context.rows(), d],
            rhs: vec![queries.rows(), queries.cols()],
        });
    }
    if d < 2 {
        return Err(Error::Input("pca needs at least 2 features".into()));
    }
    let f = fit(context)?;
    let m = match components {
        Some(m) if m == 0 || m >= d => {
            return Err(Error::Input(format!("components {m} must lie in 1..{d}")));
        }
        Some(m) => m,
        None => default_components(&f.eigenvalues),
    };
    let score = |x: &Matrix| x.iter_rows().map(|r| residual_sq(&f, r, m)).collect::<Vec<_>>();
    ScoredResult {
        method: Method::Pca,
        train_scores: score(context),
        query_scores: score(queries),
        fit_params: BTreeMap::from([("components".to_string(), m as f64)]),
    }
    .checked(context.rows(), queries.rows())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[[f64; 2]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn on_subspace_scores_zero() {
        let ctx = m(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [5.0, 5.0]]);
        let s = pca_scores(&ctx, &m(&[[3.0, 3.0]]), Some(1)).unwrap().query_scores[0];
        assert!(s.abs() < 1e-12);
    }

    #[test]
    fn off_subspace_example() {
        let ctx = m(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]);
        let s = pca_scores(&ctx, &m(&[[1.0, -1.0]]), Some(1)).unwrap().query_scores[0];
        assert!((s - 2.0).abs() < 1e-12);
    }

    #[test]
    fn permutation_invariant() {
        let a = m(&[[0.0, 1.0], [2.0, 0.5], [1.0, 3.0], [4.0, 1.0]]);
        let b = m(&[[4.0, 1.0], [1.0, 3.0], [0.0, 1.0], [2.0, 0.5]]);
        let q = m(&[[1.0, 1.0], [5.0, -2.0]]);
        let (ra, rb) = (
            pca_scores(&a, &q, Some(1)).unwrap(),
            pca_scores(&b, &q, Some(1)).unwrap(),
        );
        for (x, y) in ra.query_scores.iter().zip(&rb.query_scores) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn component_bounds() {
        let ctx = m(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.5]]);
        assert!(pca_scores(&ctx, &ctx, Some(2)).is_err());
        assert!(pca_scores(&ctx, &ctx, Some(0)).is_err());
        assert_eq!(default_components(&[9.0, 0.5, 0.5]), 1);
        assert_eq!(default_components(&[1.0, 1.0, 1.0]), 2);
    }
}
