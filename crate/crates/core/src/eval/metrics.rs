use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// AUCROC as the exact ratio `(twice_wins, 2 · n_pos · n_neg)` where a win
/// counts 2 and a tie 1.
pub fn auc_roc_counts(scores: &[f64], labels: &[u8]) -> Result<(u128, u128)> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            op: "auc_roc",
            lhs: vec![scores.len()],
            rhs: vec![labels.len()],
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("auc_roc score is NaN".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count() as u128;
    let neg = labels.len() as u128 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Input("auc_roc is undefined with a single class".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the positive rank sum, with tied blocks sharing their mean rank.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let positives = order[i..j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        twice_rank_sum += positives * (i as u128 + 1 + j as u128);
        i = j;
    }
    Ok((twice_rank_sum - pos * (pos + 1), 2 * pos * neg))
}

/// Probability that a random anomaly outscores a random nominal row, ties
/// counting one half.
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (num, den) = auc_roc_counts(scores, labels)?;
    Ok(num as f64 / den as f64)
}

/// F1 of the anomaly class; 0 when precision and recall are both 0.
pub fn f1_score(pred: &[u8], truth: &[u8]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension {
            op: "f1_score",
            lhs: vec![pred.len()],
            rhs: vec![truth.len()],
        });
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p == 1, t == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    if tp == 0 {
        return Ok(0.0);
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    /// dataset → method → rank (1 = best).
    pub per_dataset: BTreeMap<String, BTreeMap<String, f64>>,
    pub mean_rank: BTreeMap<String, f64>,
    pub median_rank: BTreeMap<String, f64>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Ranks `methods` on every dataset (higher metric is better); tied methods
/// share the mean of their rank positions.
pub fn rank_methods(table: &BTreeMap<String, BTreeMap<String, f64>>, methods: &[String]) -> Result<Ranking> {
    let mut per_dataset = BTreeMap::new();
    let mut by_method: BTreeMap<String, Vec<f64>> = methods.iter().map(|m| (m.clone(), Vec::new())).collect();
    for (dataset, row) in table {
        let mut vals = Vec::with_capacity(methods.len());
        for m in methods {
            let v = row
                .get(m)
                .copied()
                .ok_or_else(|| Error::Input(format!("missing cell ({dataset}, {m})")))?;
            vals.push((m.clone(), v));
        }
        vals.sort_by(|a, b| b.1.total_cmp(&a.1));
        let mut ranks = BTreeMap::new();
        let mut i = 0;
        while i < vals.len() {
            let mut j = i + 1;
            while j < vals.len() && vals[j].1 == vals[i].1 {
                j += 1;
            }
            let r = (i + 1 + j) as f64 / 2.0;
            for (m, _) in &vals[i..j] {
                ranks.insert(m.clone(), r);
                by_method.get_mut(m).expect("method listed").push(r);
            }
            i = j;
        }
        per_dataset.insert(dataset.clone(), ranks);
    }
    let mean_rank = by_method
        .iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(m, v)| (m.clone(), v.iter().sum::<f64>() / v.len() as f64))
        .collect();
    let median_rank = by_method
        .iter_mut()
        .filter(|(_, v)| !v.is_empty())
        .map(|(m, v)| (m.clone(), median(v)))
        .collect();
    Ok(Ranking {
        per_dataset,
        mean_rank,
        median_rank,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_examples() {
        assert_eq!(auc_roc(&[1.0, 2.0, 3.0, 4.0], &[0, 1, 0, 1]).unwrap(), 0.75);
        assert_eq!(auc_roc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auc_roc(&[3.0; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        assert!(auc_roc(&[1.0, 2.0], &[1, 1]).is_err());
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1_score(&[1, 0, 1], &[1, 0, 1]).unwrap(), 1.0);
        assert_eq!(f1_score(&[0, 0, 0], &[1, 0, 1]).unwrap(), 0.0);
        // TP = 2, FP = 1, FN = 1.
        let f = f1_score(&[1, 1, 1, 0, 0], &[1, 1, 0, 1, 0]).unwrap();
        assert!((f - 2.0 / 3.0).abs() < 1e-12);
    }

    fn table(rows: &[(&str, &[(&str, f64)])]) -> BTreeMap<String, BTreeMap<String, f64>> {
        rows.iter()
            .map(|(d, cells)| (d.to_string(), cells.iter().map(|(m, v)| (m.to_string(), *v)).collect()))
            .collect()
    }

    #[test]
    fn ranks_with_ties() {
        let methods: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let t = table(&[
            ("x", &[("a", 0.9), ("b", 0.9), ("c", 0.1)]),
            ("y", &[("a", 0.5), ("b", 0.7), ("c", 0.6)]),
        ]);
        let r = rank_methods(&t, &methods).unwrap();
        assert_eq!(r.per_dataset["x"]["a"], 1.5);
        assert_eq!(r.per_dataset["x"]["b"], 1.5);
        assert_eq!(r.per_dataset["x"]["c"], 3.0);
        for ranks in r.per_dataset.values() {
            assert_eq!(ranks.values().sum::<f64>(), 6.0);
        }
        assert_eq!(r.mean_rank["b"], 1.25);
    }

    #[test]
    fn missing_cell_named() {
        let methods: Vec<String> = vec!["a".into(), "b".into()];
        let t = table(&[("x", &[("a", 0.9)])]);
        let err = rank_methods(&t, &methods).unwrap_err().to_string();
        assert!(err.contains("(x, b)"));
    }
}
