use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;

/// Per-feature affine map of `[min, max]` onto `[-1, 1]`.
///
/// Constant features (zero range) are only shifted so the constant maps to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(data: &Matrix) -> Self {
        let (mins, maxs) = data.column_ranges().into_iter().unzip();
        Self { mins, maxs }
    }

    fn range(&self, j: usize) -> f64 {
        self.maxs[j] - self.mins[j]
    }

    pub fn is_constant(&self, j: usize) -> bool {
        let r = self.range(j);
        r.is_nan() || r <= 0.0
    }

    pub fn forward_value(&self, j: usize, x: f64) -> f64 {
        if self.is_constant(j) {
            x - self.mins[j]
        } else {
            2.0 * (x - self.mins[j]) / self.range(j) - 1.0
        }
    }

    pub fn inverse_value(&self, j: usize, y: f64) -> f64 {
        if self.is_constant(j) {
            y + self.mins[j]
        } else {
            self.mins[j] + (y + 1.0) * 0.5 * self.range(j)
        }
    }

    pub fn transform(&self, data: &Matrix) -> Matrix {
        let mut out = data.clone();
        for i in 0..out.rows() {
            for (j, x) in out.row_mut(i).iter_mut().enumerate() {
                *x = self.forward_value(j, *x);
            }
        }
        out
    }
}
