/// O(n²) pair-counting AUC: fraction of (positive, negative) pairs where the
/// positive scores higher, ties counted one half. Returned as an exact ratio
/// of twice the pair count so comparisons need no tolerance.
pub fn pair_count_auc(scores: &[f64], labels: &[u8]) -> (u64, u64) {
    let mut twice_wins = 0u64;
    let mut pairs = 0u64;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1;
            if si > sj {
                twice_wins += 2;
            } else if si == sj {
                twice_wins += 1;
            }
        }
    }
    (twice_wins, 2 * pairs)
}

pub fn pair_count_auc_f64(scores: &[f64], labels: &[u8]) -> f64 {
    let (num, den) = pair_count_auc(scores, labels);
    num as f64 / den as f64
}
