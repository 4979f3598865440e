use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{AnomalyKind, LabeledDataset, PriorConfig, Provenance, RealRange};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scaling::MinMaxScaler;

/// Range of the per-coordinate component means.
pub const MEAN_BOUND: f64 = 2.0;
/// Range of the covariance eigenvalues.
pub const EIGEN_RANGE: (f64, f64) = (0.05, 0.3);
/// Uniform box for global anomalies in the rescaled frame.
pub const GLOBAL_BOX: f64 = 1.1;
/// Half-width of the sampling interval around a constant feature.
pub const CONSTANT_HALF_WIDTH: f64 = 0.1;

/// Gaussian mixture `Σ_m π_m N(μ_m, Σ_m)` in `d` dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmSpec {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Row-major `d×d` covariance per component.
    pub covariances: Vec<Vec<f64>>,
    pub d: usize,
    /// Lower Cholesky factor per component, row-major.
    #[serde(skip)]
    factors: Vec<Vec<f64>>,
}

impl GmmSpec {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covariances: Vec<Vec<f64>>) -> Result<Self> {
        let m = weights.len();
        if m == 0 || means.len() != m || covariances.len() != m {
            return Err(Error::Input(format!(
                "mixture needs matching weights/means/covariances, got {}/{}/{}",
                m,
                means.len(),
                covariances.len()
            )));
        }
        let d = means[0].len();
        if d == 0 {
            return Err(Error::Input("mixture dimension is zero".into()));
        }
        if weights.iter().any(|&w| w < 0.0) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Input("mixture weights must form a simplex".into()));
        }
        let mut factors = Vec::with_capacity(m);
        for (mu, cov) in means.iter().zip(&covariances) {
            if mu.len() != d || cov.len() != d * d {
                return Err(Error::Dimension {
                    op: "gmm component",
                    lhs: vec![d, d],
                    rhs: vec![mu.len(), cov.len()],
                });
            }
            let sigma = DMatrix::from_row_slice(d, d, cov);
            if (&sigma - sigma.transpose()).abs().max() > 1e-9 {
                return Err(Error::Input("covariance is not symmetric".into()));
            }
            let chol = sigma
                .cholesky()
                .ok_or_else(|| Error::Input("covariance is not positive definite".into()))?;
            let l = chol.l();
            factors.push(
                (0..d)
                    .flat_map(|i| (0..d).map(move |j| (i, j)))
                    .map(|(i, j)| l[(i, j)])
                    .collect(),
            );
        }
        Ok(Self {
            weights,
            means,
            covariances,
            d,
            factors,
        })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    fn ensure_factors(&mut self) -> Result<()> {
        if self.factors.len() != self.weights.len() {
            *self = GmmSpec::new(self.weights.clone(), self.means.clone(), self.covariances.clone())?;
        }
        Ok(())
    }

    pub fn pick_component<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (m, &w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return m;
            }
        }
        self.weights.len() - 1
    }

    /// `mean + sqrt(cov_scale) · L z`.
    fn draw<R: Rng>(&self, m: usize, mean: &[f64], cov_scale: f64, rng: &mut R, out: &mut [f64]) {
        let d = self.d;
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let l = &self.factors[m];
        let s = cov_scale.sqrt();
        for i in 0..d {
            let mut acc = 0.0;
            for j in 0..=i {
                acc += l[i * d + j] * z[j];
            }
            out[i] = mean[i] + s * acc;
        }
    }

    /// `n` i.i.d. rows from the mixture.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Matrix {
        let mut out = Matrix::zeros(n, self.d);
        for i in 0..n {
            let m = self.pick_component(rng);
            self.draw(m, &self.means[m], 1.0, rng, out.row_mut(i));
        }
        out
    }

    pub fn hash(&self) -> String {
        crate::sha256_hex(&serde_json::to_vec(self).expect("spec serializes"))
    }
}

fn random_orthogonal<R: Rng>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    // Sign fix makes the draw Haar-distributed.
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            let mut col = q.column_mut(j);
            col.neg_mut();
        }
    }
    q
}

/// Draws mixture parameters: `d` and `M` uniform over their ranges, weights
/// from a flat Dirichlet, means uniform in `(-2, 2)`, covariances `Q Λ Qᵀ`
/// with random orthogonal `Q` and eigenvalues uniform in `[0.05, 0.3]`.
pub fn sample_gmm_spec<R: Rng>(cfg: &PriorConfig, rng: &mut R) -> Result<GmmSpec> {
    let d = rng.random_range(cfg.dim_range.lo..=cfg.dim_range.hi);
    let m = rng.random_range(cfg.components_range.lo..=cfg.components_range.hi);
    let raw: Vec<f64> = (0..m).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = raw.iter().sum();
    let mut weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    // Renormalize so the sum is 1 to rounding.
    let s: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= s);
    let means = (0..m)
        .map(|_| (0..d).map(|_| rng.random_range(-MEAN_BOUND..MEAN_BOUND)).collect())
        .collect();
    let covariances = (0..m)
        .map(|_| {
            let q = random_orthogonal(d, rng);
            let lambda = DVector::from_fn(d, |_, _| rng.random_range(EIGEN_RANGE.0..=EIGEN_RANGE.1));
            let sigma = &q * DMatrix::from_diagonal(&lambda) * q.transpose();
            let sym = (&sigma + sigma.transpose()) * 0.5;
            (0..d)
                .flat_map(|i| (0..d).map(move |j| (i, j)))
                .map(|(i, j)| sym[(i, j)])
                .collect()
        })
        .collect();
    GmmSpec::new(weights, means, covariances)
}

/// Random mixture plus `n` nominal rows drawn from it.
pub fn sample_gmm_nominal<R: Rng>(cfg: &PriorConfig, n: usize, rng: &mut R) -> Result<(GmmSpec, Matrix)> {
    if n == 0 {
        return Err(Error::Input("need at least one nominal row".into()));
    }
    let spec = sample_gmm_spec(cfg, rng)?;
    let rows = spec.sample(n, rng);
    Ok((spec, rows))
}

/// Anomalies relative to a mixture and its nominal sample.
///
/// * Local: component `m ∝ π`, then `N(μ_m, α Σ_m)`.
/// * Cluster: component `m ∝ π`, then `N(α μ_m, Σ_m)`.
/// * Global: uniform in `[-1.1, 1.1]^d` in the frame where the nominal rows
///   span `[-1, 1]` per feature, mapped back to the original frame. A
///   constant feature is drawn uniformly within ±0.1 of its value.
pub fn inject_anomalies<R: Rng>(
    spec: &GmmSpec,
    nominal: &Matrix,
    kind: AnomalyKind,
    count: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<Matrix> {
    let mut spec = spec.clone();
    spec.ensure_factors()?;
    let d = spec.d;
    if nominal.cols() != d {
        return Err(Error::Dimension {
            op: "inject_anomalies",
            lhs: vec![d],
            rhs: vec![nominal.cols()],
        });
    }
    let mut out = Matrix::zeros(count, d);
    match kind {
        AnomalyKind::Local | AnomalyKind::Cluster => {
            if alpha <= 1.0 {
                return Err(Error::Input(format!("alpha {alpha} must exceed 1")));
            }
            for i in 0..count {
                let m = spec.pick_component(rng);
                if kind == AnomalyKind::Local {
                    let mean = spec.means[m].clone();
                    spec.draw(m, &mean, alpha, rng, out.row_mut(i));
                } else {
                    let mean: Vec<f64> = spec.means[m].iter().map(|x| alpha * x).collect();
                    spec.draw(m, &mean, 1.0, rng, out.row_mut(i));
                }
            }
        }
        AnomalyKind::Global => {
            if nominal.rows() == 0 {
                return Err(Error::Input("global anomalies need nominal rows to rescale".into()));
            }
            let scaler = MinMaxScaler::fit(nominal);
            for i in 0..count {
                for j in 0..d {
                    let v = if scaler.is_constant(j) {
                        scaler.mins[j] + rng.random_range(-CONSTANT_HALF_WIDTH..=CONSTANT_HALF_WIDTH)
                    } else {
                        scaler.inverse_value(j, rng.random_range(-GLOBAL_BOX..=GLOBAL_BOX))
                    };
                    out.set(i, j, v);
                }
            }
        }
        AnomalyKind::ClassBased => {
            return Err(Error::Input(
                "class-based anomalies come from the classification prior".into(),
            ))
        }
    }
    Ok(out)
}

/// Complete GMM dataset: `n_nominal` mixture rows followed by `n_anomalies`
/// rows of `kind`, in that order.
pub fn sample_gmm_dataset<R: Rng>(
    cfg: &PriorConfig,
    kind: AnomalyKind,
    n_nominal: usize,
    n_anomalies: usize,
    seed: u64,
    rng: &mut R,
) -> Result<(GmmSpec, LabeledDataset)> {
    let (spec, nominal) = sample_gmm_nominal(cfg, n_nominal, rng)?;
    let anomalies = inject_anomalies(&spec, &nominal, kind, n_anomalies, cfg.alpha, rng)?;
    let features = nominal.stack(&anomalies)?;
    let mut labels = vec![0u8; n_nominal];
    labels.extend(std::iter::repeat_n(1u8, n_anomalies));
    let provenance = Provenance {
        generator: format!("gmm-{}", kind.name()),
        spec_hash: spec.hash(),
        seed,
    };
    let ds = LabeledDataset::new(features, labels, Some(kind), provenance)?;
    Ok((spec, ds))
}

/// Evaluation dataset of `n` rows from a fresh mixture with an anomaly rate
/// drawn uniformly from `rate`, seeded independently of pretraining streams.
pub fn heldout_gmm_dataset(
    cfg: &PriorConfig,
    kind: AnomalyKind,
    n: usize,
    rate: RealRange,
    seed: u64,
) -> Result<LabeledDataset> {
    if !(rate.lo > 0.0 && rate.hi < 1.0 && rate.lo <= rate.hi) {
        return Err(Error::Input(format!(
            "anomaly rate range {rate:?} must lie inside (0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = if rate.lo < rate.hi {
        rng.random_range(rate.lo..=rate.hi)
    } else {
        rate.lo
    };
    let anomalies = ((n as f64 * r).round() as usize).clamp(1, n.saturating_sub(1));
    Ok(sample_gmm_dataset(cfg, kind, n - anomalies, anomalies, seed, &mut rng)?.1)
}
