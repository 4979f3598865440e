//! Input builders shared by the benchmarks.

use icad_core::matrix::Matrix;
use icad_core::priors::{episode_rng, sample_pretraining_episode, Episode, IntRange, PriorConfig};
use rand::Rng;

/// Uniform `[-1, 1)` matrix from a seeded stream.
pub fn uniform_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = episode_rng(seed, 0);
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::new(rows, cols, data).expect("shape matches data")
}

/// A pretraining episode with a fixed row count and width.
pub fn fixed_episode(rows: usize, d: usize, query: usize, seed: u64) -> Episode {
    let cfg = PriorConfig {
        dim_range: IntRange::new(d, d),
        episode_rows_range: IntRange::new(rows, rows),
        query_size: query,
        seed,
        ..PriorConfig::default()
    };
    sample_pretraining_episode(&cfg, &mut episode_rng(seed, 0)).expect("episode samples")
}
