//! The in-context anomaly detector: row embedding, masked transformer
//! encoder and an MLP decoder that emits (nominal, anomaly) logits for every
//! query row in one pass.

mod checkpoint;
mod params;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, FORMAT_VERSION};
pub use params::{ModelParams, ParamVars};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::ndnum::{AttentionMask, Real, Tape, Tensor, Var};
use crate::priors::Episode;

pub const OUT_CLASSES: usize = 2;
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_max: usize,
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    /// Width of the feed-forward sublayer inside each block.
    pub ff_hidden: usize,
    pub decoder_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_max: 50,
            embed_dim: 512,
            layers: 12,
            heads: 4,
            ff_hidden: 1024,
            decoder_hidden: 2048,
        }
    }
}

impl ModelConfig {
    /// Small configuration that trains on a single CPU core.
    pub fn desk() -> Self {
        Self {
            d_max: 20,
            embed_dim: 128,
            layers: 4,
            heads: 2,
            ff_hidden: 256,
            decoder_hidden: 256,
        }
    }

    /// Toy configuration for unit tests.
    pub fn tiny() -> Self {
        Self {
            d_max: 6,
            embed_dim: 8,
            layers: 2,
            heads: 2,
            ff_hidden: 12,
            decoder_hidden: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let extents = [
            self.d_max,
            self.embed_dim,
            self.layers,
            self.heads,
            self.ff_hidden,
            self.decoder_hidden,
        ];
        if extents.contains(&0) {
            return Err(Error::Config(format!("model extents must be >= 1: {self:?}")));
        }
        if !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "embed_dim {} not divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        Ok(())
    }
}

/// Per-query anomaly probabilities and thresholded decisions.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Rows of (nominal, anomaly) probabilities.
    pub probs: Vec<[f64; 2]>,
    pub labels: Vec<u8>,
}

impl Prediction {
    pub fn anomaly_scores(&self) -> Vec<f64> {
        self.probs.iter().map(|p| p[1]).collect()
    }

    fn from_logits<T: Real>(logits: &Tensor<T>, threshold: f64) -> Self {
        let probs: Vec<[f64; 2]> = (0..logits.rows())
            .map(|i| {
                let r = logits.row(i);
                let (a, b) = (r[0].as_f64(), r[1].as_f64());
                let m = a.max(b);
                let (ea, eb) = ((a - m).exp(), (b - m).exp());
                [ea / (ea + eb), eb / (ea + eb)]
            })
            .collect();
        let labels = probs.iter().map(|p| u8::from(p[1] > threshold)).collect();
        Self { probs, labels }
    }
}

/// Attention pattern over `n_ctx` context tokens followed by `n_q` query
/// tokens: context attends to context, queries attend to context only.
pub fn build_mask(n_ctx: usize, n_q: usize) -> Result<AttentionMask> {
    if n_ctx == 0 {
        return Err(Error::Contract(
            "empty context: query tokens would have nothing to attend to".into(),
        ));
    }
    Ok(AttentionMask::from_fn(n_ctx + n_q, |_, j| j < n_ctx))
}

/// Zero-pads rows to `d_max` and rescales by `d_max / d`.
fn padded_input<T: Real>(rows: &[&Matrix], d_max: usize) -> Result<Tensor<T>> {
    let d = rows[0].cols();
    if d > d_max {
        return Err(Error::Input(format!("feature count {d} exceeds model d_max {d_max}")));
    }
    if d == 0 {
        return Err(Error::Input("rows have no features".into()));
    }
    let scale = d_max as f64 / d as f64;
    let n: usize = rows.iter().map(|m| m.rows()).sum();
    let mut data = vec![T::zero(); n * d_max];
    let mut r = 0;
    for m in rows {
        if m.cols() != d {
            return Err(Error::Dimension {
                op: "embed_rows",
                lhs: vec![d],
                rhs: vec![m.cols()],
            });
        }
        for row in m.iter_rows() {
            for (dst, &x) in data[r * d_max..r * d_max + d].iter_mut().zip(row) {
                *dst = T::lit(x * scale);
            }
            r += 1;
        }
    }
    Tensor::new(vec![n, d_max], data)
}

/// Token embeddings for a block of rows.
pub fn embed_rows<T: Real>(features: &Matrix, params: &ModelParams<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let x = tape.constant(padded_input(&[features], params.config().d_max)?);
    let (w, b) = vars.embed();
    let out = tape.linear(x, w, b)?;
    Ok(tape.value(out).clone())
}

/// Records the full network on `tape` and returns the `n_q × 2` query logits.
pub fn forward_on_tape<T: Real>(
    tape: &mut Tape<T>,
    vars: &ParamVars,
    cfg: &ModelConfig,
    context: &Matrix,
    query: &Matrix,
) -> Result<Var> {
    let (n_ctx, n_q) = (context.rows(), query.rows());
    if n_q == 0 {
        return Err(Error::Input("no query rows".into()));
    }
    let mask = build_mask(n_ctx, n_q)?;
    let input = tape.constant(padded_input(&[context, query], cfg.d_max)?);
    let (ew, eb) = vars.embed();
    let mut x = tape.linear(input, ew, eb)?;

    for l in 0..cfg.layers {
        let lv = vars.layer(l);
        let h = tape.layer_norm(x, lv.ln1.0, lv.ln1.1, LAYER_NORM_EPS)?;
        let a = tape.masked_attention(h, &lv.attn, &mask, cfg.heads)?;
        x = tape.add(x, a)?;
        let h = tape.layer_norm(x, lv.ln2.0, lv.ln2.1, LAYER_NORM_EPS)?;
        let f = tape.linear(h, lv.ff1.0, lv.ff1.1)?;
        let f = tape.gelu(f);
        let f = tape.linear(f, lv.ff2.0, lv.ff2.1)?;
        x = tape.add(x, f)?;
        if !tape.value(x).all_finite() {
            return Err(Error::Numeric(format!("non-finite activation after layer {l}")));
        }
    }

    let (g, b) = vars.final_ln();
    let x = tape.layer_norm(x, g, b, LAYER_NORM_EPS)?;
    let rows: Vec<usize> = (n_ctx..n_ctx + n_q).collect();
    let q = tape.select_rows(x, &rows)?;
    let ((w1, b1), (w2, b2)) = vars.decoder();
    let h = tape.linear(q, w1, b1)?;
    let h = tape.gelu(h);
    let logits = tape.linear(h, w2, b2)?;
    if !tape.value(logits).all_finite() {
        return Err(Error::Numeric("non-finite logits in decoder".into()));
    }
    Ok(logits)
}

/// Query logits for a context/query pair without recording gradients.
pub fn query_logits<T: Real>(context: &Matrix, query: &Matrix, params: &ModelParams<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let logits = forward_on_tape(&mut tape, &vars, params.config(), context, query)?;
    Ok(tape.value(logits).clone())
}

/// Anomaly probabilities for query rows given an unlabeled context.
pub fn forward_rows<T: Real>(context: &Matrix, query: &Matrix, params: &ModelParams<T>) -> Result<Prediction> {
    predict_rows(context, query, params, 0.5)
}

pub fn predict_rows<T: Real>(
    context: &Matrix,
    query: &Matrix,
    params: &ModelParams<T>,
    threshold: f64,
) -> Result<Prediction> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Input(format!("threshold {threshold} outside (0, 1)")));
    }
    let logits = query_logits(context, query, params)?;
    Ok(Prediction::from_logits(&logits, threshold))
}

/// Forward pass on an episode. Only the feature matrices are read.
pub fn forward<T: Real>(episode: &Episode, params: &ModelParams<T>) -> Result<Prediction> {
    forward_rows(&episode.context, &episode.query, params)
}

pub fn predict<T: Real>(episode: &Episode, params: &ModelParams<T>, threshold: f64) -> Result<Prediction> {
    predict_rows(&episode.context, &episode.query, params, threshold)
}
