use rand::Rng;
use rand_distr::StandardNormal;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::ndnum::{AttentionWeights, Real, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    /// Gaussian with standard deviation `1/sqrt(fan_in)`.
    Scaled(usize),
    Zeros,
    Ones,
}

/// Name, shape and initializer of every parameter tensor, in storage order.
fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let e = cfg.embed_dim;
    let f = cfg.ff_hidden;
    let mut out = vec![
        ("embed.weight".to_string(), vec![cfg.d_max, e], Init::Scaled(cfg.d_max)),
        ("embed.bias".to_string(), vec![e], Init::Zeros),
    ];
    for l in 0..cfg.layers {
        let p = |s: &str| format!("layers.{l}.{s}");
        out.push((p("ln1.gamma"), vec![e], Init::Ones));
        out.push((p("ln1.beta"), vec![e], Init::Zeros));
        for w in ["q", "k", "v", "o"] {
            out.push((p(&format!("attn.w{w}")), vec![e, e], Init::Scaled(e)));
            out.push((p(&format!("attn.b{w}")), vec![e], Init::Zeros));
        }
        out.push((p("ln2.gamma"), vec![e], Init::Ones));
        out.push((p("ln2.beta"), vec![e], Init::Zeros));
        out.push((p("ff.w1"), vec![e, f], Init::Scaled(e)));
        out.push((p("ff.b1"), vec![f], Init::Zeros));
        out.push((p("ff.w2"), vec![f, e], Init::Scaled(f)));
        out.push((p("ff.b2"), vec![e], Init::Zeros));
    }
    let dh = cfg.decoder_hidden;
    out.extend([
        ("final_ln.gamma".to_string(), vec![e], Init::Ones),
        ("final_ln.beta".to_string(), vec![e], Init::Zeros),
        ("decoder.w1".to_string(), vec![e, dh], Init::Scaled(e)),
        ("decoder.b1".to_string(), vec![dh], Init::Zeros),
        ("decoder.w2".to_string(), vec![dh, super::OUT_CLASSES], Init::Scaled(dh)),
        ("decoder.b2".to_string(), vec![super::OUT_CLASSES], Init::Zeros),
    ]);
    out
}

const PER_LAYER: usize = 16;

/// All network weights in a fixed, named order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T = f32> {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ModelParams<T> {
    pub fn init<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape, init) in layout(&config) {
            let n: usize = shape.iter().product();
            let data: Vec<T> = match init {
                Init::Scaled(fan_in) => {
                    let std = 1.0 / (fan_in as f64).sqrt();
                    (0..n)
                        .map(|_| T::lit(std * rng.sample::<f64, _>(StandardNormal)))
                        .collect()
                }
                Init::Zeros => vec![T::zero(); n],
                Init::Ones => vec![T::one(); n],
            };
            names.push(name);
            tensors.push(Tensor::new(shape, data)?);
        }
        Ok(Self { config, names, tensors })
    }

    /// Assembles parameters from named tensors, checking them against the
    /// layout implied by `config`.
    pub fn from_named(config: ModelConfig, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        config.validate()?;
        let expected = layout(&config);
        if expected.len() != named.len() {
            return Err(Error::Input(format!(
                "expected {} parameter tensors, got {}",
                expected.len(),
                named.len()
            )));
        }
        for ((name, shape, _), (got_name, t)) in expected.iter().zip(&named) {
            if name != got_name || shape.as_slice() != t.shape() {
                return Err(Error::Input(format!(
                    "parameter {got_name} {:?} does not match expected {name} {shape:?}",
                    t.shape()
                )));
            }
            if !t.all_finite() {
                return Err(Error::Numeric(format!("parameter {name} has non-finite values")));
            }
        }
        let (names, tensors) = named.into_iter().unzip();
        Ok(Self { config, names, tensors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Places every tensor on `tape`, as trainable leaves or as constants.
    pub fn register(&self, tape: &mut Tape<T>, trainable: bool) -> ParamVars {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        ParamVars {
            vars,
            layers: self.config.layers,
        }
    }
}

/// Tape handles for a registered [`ModelParams`].
#[derive(Debug, Clone)]
pub struct ParamVars {
    vars: Vec<Var>,
    layers: usize,
}

pub(crate) struct LayerVars {
    pub ln1: (Var, Var),
    pub attn: AttentionWeights,
    pub ln2: (Var, Var),
    pub ff1: (Var, Var),
    pub ff2: (Var, Var),
}

impl ParamVars {
    pub fn all(&self) -> &[Var] {
        &self.vars
    }

    pub(crate) fn embed(&self) -> (Var, Var) {
        (self.vars[0], self.vars[1])
    }

    pub(crate) fn layer(&self, l: usize) -> LayerVars {
        let v = &self.vars[2 + l * PER_LAYER..2 + (l + 1) * PER_LAYER];
        LayerVars {
            ln1: (v[0], v[1]),
            attn: AttentionWeights {
                wq: v[2],
                bq: v[3],
                wk: v[4],
                bk: v[5],
                wv: v[6],
                bv: v[7],
                wo: v[8],
                bo: v[9],
            },
            ln2: (v[10], v[11]),
            ff1: (v[12], v[13]),
            ff2: (v[14], v[15]),
        }
    }

    fn tail(&self) -> &[Var] {
        &self.vars[2 + self.layers * PER_LAYER..]
    }

    pub(crate) fn final_ln(&self) -> (Var, Var) {
        (self.tail()[0], self.tail()[1])
    }

    pub(crate) fn decoder(&self) -> ((Var, Var), (Var, Var)) {
        let t = self.tail();
        ((t[2], t[3]), (t[4], t[5]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn layout_matches_param_count() {
        let cfg = ModelConfig::desk();
        let p = ModelParams::<f32>::init(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let e = cfg.embed_dim;
        let per_layer = 4 * e + 4 * (e * e + e) + 2 * e * cfg.ff_hidden + cfg.ff_hidden + e;
        let expected = cfg.d_max * e
            + e
            + cfg.layers * per_layer
            + 2 * e
            + e * cfg.decoder_hidden
            + cfg.decoder_hidden
            + cfg.decoder_hidden * 2
            + 2;
        assert_eq!(p.param_count(), expected);
        assert_eq!(p.names().len(), 2 + cfg.layers * PER_LAYER + 6);
        assert!(p.get("layers.0.attn.wq").is_some());
        assert_eq!(p.get("final_ln.gamma").unwrap().data()[0], 1.0);
    }

    #[test]
    fn from_named_rejects_wrong_shape() {
        let cfg = ModelConfig::tiny();
        let p = ModelParams::<f32>::init(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut named: Vec<_> = p.names().iter().cloned().zip(p.tensors().iter().cloned()).collect();
        assert!(ModelParams::from_named(cfg.clone(), named.clone()).is_ok());
        named[0].1 = Tensor::zeros(&[1, 1]);
        assert!(ModelParams::from_named(cfg, named).is_err());
    }
}
