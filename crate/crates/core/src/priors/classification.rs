use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{AnomalyKind, LabeledDataset, PriorConfig, Provenance};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const LATENT_DIM: usize = 8;
pub const HIDDEN_WIDTH: usize = 32;
pub const HEAD_NOISE_STD: f64 = 0.1;
/// Minimum rows per class demanded of a source.
pub const ROWS_PER_CLASS: usize = 10;
const MAX_HEAD_RETRIES: usize = 32;
const CALIBRATION_ROWS: usize = 400;
const CALIBRATION_ROUNDS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Sine,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Sine => x.sin(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Dense {
    w: Matrix,
    b: Vec<f64>,
}

impl Dense {
    fn random<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let scale = 1.0 / (fan_in as f64).sqrt();
        let mut w = Matrix::zeros(fan_in, fan_out);
        for x in w.data_mut() {
            *x = scale * rng.sample::<f64, _>(StandardNormal);
        }
        let b = (0..fan_out).map(|_| rng.sample(StandardNormal)).collect();
        Self { w, b }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.b.clone();
        for (i, &xi) in x.iter().enumerate() {
            for (o, &w) in out.iter_mut().zip(self.w.row(i)) {
                *o += xi * w;
            }
        }
        out
    }
}

/// Random-network class generator: latent `z ~ N(0, I_8)` goes through two
/// hidden layers of width 32 to features in `R^d`; a random linear head plus
/// Gaussian noise picks the class by argmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationGenerator {
    pub d: usize,
    pub classes: usize,
    pub activation: Activation,
    /// Classes labelled nominal; all others are anomalies.
    pub nominal_classes: Vec<usize>,
    layers: [Dense; 3],
    head: Dense,
}

impl ClassificationGenerator {
    /// Draws `d`, `C`, the network, the head and a random nonempty proper
    /// subset of nominal classes.
    pub fn sample<R: Rng>(cfg: &PriorConfig, rng: &mut R) -> Self {
        let d = rng.random_range(cfg.dim_range.lo..=cfg.dim_range.hi);
        let classes = rng.random_range(cfg.classes_range.lo..=cfg.classes_range.hi);
        Self::with_shape(d, classes, rng)
    }

    pub fn with_shape<R: Rng>(d: usize, classes: usize, rng: &mut R) -> Self {
        let activation = [Activation::Tanh, Activation::Relu, Activation::Sine][rng.random_range(0..3)];
        let layers = [
            Dense::random(LATENT_DIM, HIDDEN_WIDTH, rng),
            Dense::random(HIDDEN_WIDTH, HIDDEN_WIDTH, rng),
            Dense::random(HIDDEN_WIDTH, d, rng),
        ];
        let head = Dense::random(d, classes, rng);
        let mut generator = Self {
            d,
            classes,
            activation,
            nominal_classes: Vec::new(),
            layers,
            head,
        };
        generator.calibrate_head(rng);
        let n_nominal = rng.random_range(1..classes);
        let mut order: Vec<usize> = (0..classes).collect();
        order.shuffle(rng);
        let mut nominal_classes = order[..n_nominal].to_vec();
        nominal_classes.sort_unstable();
        generator.nominal_classes = nominal_classes;
        generator
    }

    fn resample_head<R: Rng>(&mut self, rng: &mut R) {
        self.head = Dense::random(self.d, self.classes, rng);
        self.calibrate_head(rng);
    }

    fn features(&self, z: &[f64]) -> Vec<f64> {
        let mut h = self.layers[0].apply(z);
        h.iter_mut().for_each(|v| *v = self.activation.apply(*v));
        h = self.layers[1].apply(&h);
        h.iter_mut().for_each(|v| *v = self.activation.apply(*v));
        self.layers[2].apply(&h)
    }

    /// Shifts head biases until every class wins a minimum share of a
    /// calibration sample; a random linear head alone leaves classes whose
    /// weight vector never attains the argmax.
    fn calibrate_head<R: Rng>(&mut self, rng: &mut R) {
        let c = self.classes;
        let target = (CALIBRATION_ROWS / (4 * c)).max(1);
        let logits: Vec<Vec<f64>> = (0..CALIBRATION_ROWS)
            .map(|_| {
                let z: Vec<f64> = (0..LATENT_DIM).map(|_| rng.sample(StandardNormal)).collect();
                let mut l = self.head.apply(&self.features(&z));
                l.iter_mut().zip(&self.head.b).for_each(|(v, b)| *v -= b);
                l
            })
            .collect();
        let mut bias = vec![0.0; c];
        for k in 0..c {
            let mean = logits.iter().map(|l| l[k]).sum::<f64>() / CALIBRATION_ROWS as f64;
            bias[k] = -mean;
        }
        for _ in 0..CALIBRATION_ROUNDS {
            let mut counts = vec![0usize; c];
            for l in &logits {
                counts[argmax(l.iter().zip(&bias).map(|(v, b)| v + b))] += 1;
            }
            let (weak, &n) = counts.iter().enumerate().min_by_key(|(_, n)| **n).expect("classes > 0");
            if n >= target {
                break;
            }
            let mut margins: Vec<f64> = logits
                .iter()
                .map(|l| {
                    let best_other = (0..c)
                        .filter(|&j| j != weak)
                        .map(|j| l[j] + bias[j])
                        .fold(f64::NEG_INFINITY, f64::max);
                    best_other - (l[weak] + bias[weak])
                })
                .collect();
            margins.sort_by(f64::total_cmp);
            bias[weak] += margins[target - 1].max(0.0) + 1e-9;
        }
        self.head.b = bias;
    }

    /// `n` rows with their class indices.
    pub fn draw<R: Rng>(&self, n: usize, rng: &mut R) -> (Matrix, Vec<usize>) {
        let mut x = Matrix::zeros(n, self.d);
        let mut classes = Vec::with_capacity(n);
        for i in 0..n {
            let z: Vec<f64> = (0..LATENT_DIM).map(|_| rng.sample(StandardNormal)).collect();
            let row = self.features(&z);
            let logits: Vec<f64> = self
                .head
                .apply(&row)
                .into_iter()
                .map(|l| l + HEAD_NOISE_STD * rng.sample::<f64, _>(StandardNormal))
                .collect();
            x.row_mut(i).copy_from_slice(&row);
            classes.push(argmax(logits.into_iter()));
        }
        (x, classes)
    }

    /// Draws `n` rows, resampling the head (bounded) until every class is
    /// populated, then labels them.
    pub fn dataset<R: Rng>(&mut self, n: usize, seed: u64, rng: &mut R) -> Result<LabeledDataset> {
        if n < self.classes * ROWS_PER_CLASS {
            return Err(Error::Input(format!(
                "{n} rows cannot populate {} classes with {ROWS_PER_CLASS} rows each",
                self.classes
            )));
        }
        for _ in 0..MAX_HEAD_RETRIES {
            let (x, cls) = self.draw(n, rng);
            let mut counts = vec![0usize; self.classes];
            cls.iter().for_each(|&c| counts[c] += 1);
            if counts.iter().all(|&c| c > 0) {
                let labels = label_by_classes(&cls, &self.nominal_classes);
                return LabeledDataset::new(x, labels, Some(AnomalyKind::ClassBased), self.provenance(seed));
            }
            self.resample_head(rng);
        }
        Err(Error::Generation(format!(
            "no head populated all {} classes within {MAX_HEAD_RETRIES} attempts",
            self.classes
        )))
    }

    pub fn provenance(&self, seed: u64) -> Provenance {
        Provenance {
            generator: "classification".into(),
            spec_hash: crate::sha256_hex(&serde_json::to_vec(self).expect("generator serializes")),
            seed,
        }
    }
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// 0 for rows whose class is nominal, 1 otherwise.
pub fn label_by_classes(classes: &[usize], nominal: &[usize]) -> Vec<u8> {
    classes.iter().map(|c| u8::from(!nominal.contains(c))).collect()
}

/// Classification source of `n` rows.
pub fn sample_classification_episode_source<R: Rng>(
    cfg: &PriorConfig,
    n: usize,
    rng: &mut R,
) -> Result<LabeledDataset> {
    let mut generator = ClassificationGenerator::sample(cfg, rng);
    generator.dataset(n, cfg.seed, rng)
}
