//! Pretraining on an endless stream of prior episodes.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward_on_tape, save_checkpoint, ModelConfig, ModelParams};
use crate::ndnum::{cosine_lr, AdamConfig, AdamState, Tape, Tensor};
use crate::priors::{episode_rng, sample_pretraining_episode, Episode, PriorConfig};

/// Global gradient norm above which the update is rescaled.
pub const CLIP_NORM: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: u64,
    pub lr0: f64,
    pub batch_episodes: usize,
    pub grad_accum: usize,
    pub prior: PriorConfig,
    pub model: ModelConfig,
    /// Steps between periodic checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
    pub seed: u64,
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            lr0: 1e-4,
            batch_episodes: 4,
            grad_accum: 16,
            prior: PriorConfig::default(),
            model: ModelConfig::desk(),
            checkpoint_every: 0,
            seed: 0,
            log_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_episodes == 0 || self.grad_accum == 0 {
            return Err(Error::Config(
                "steps, batch_episodes and grad_accum must be >= 1".into(),
            ));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 {} must be positive", self.lr0)));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be >= 1".into()));
        }
        self.model.validate()?;
        self.prior.validate()?;
        if self.prior.dim_range.hi > self.model.d_max {
            return Err(Error::Config(format!(
                "prior dimensions up to {} exceed model d_max {}",
                self.prior.dim_range.hi, self.model.d_max
            )));
        }
        Ok(())
    }

    pub fn episodes_per_step(&self) -> usize {
        self.batch_episodes * self.grad_accum
    }

    /// Stream index of episode `b` in micro-batch `a` of `step`.
    fn episode_index(&self, step: u64, a: usize, b: usize) -> u64 {
        step * self.episodes_per_step() as u64 + (a * self.batch_episodes + b) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub acc: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
    /// Mean loss of every step, logged or not.
    pub step_losses: Vec<f64>,
    pub clipped_steps: Vec<u64>,
    pub checkpoint: Option<PathBuf>,
}

impl TrainLog {
    /// Mean step loss over the last `window` steps.
    pub fn smoothed_loss(&self, window: usize) -> Option<f64> {
        let n = self.step_losses.len();
        if n == 0 {
            return None;
        }
        let tail = &self.step_losses[n.saturating_sub(window.max(1))..];
        Some(tail.iter().sum::<f64>() / tail.len() as f64)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Internal(format!("{}: {e}", path.display())))?;
        for r in &self.records {
            w.serialize(r).map_err(|e| Error::Internal(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Loss, correct count and parameter gradients for one episode.
pub struct EpisodeGrad {
    pub loss: f64,
    pub correct: usize,
    pub queries: usize,
    pub grads: Vec<Tensor<f32>>,
}

fn query_targets(episode: &Episode) -> Vec<usize> {
    episode.query_labels.iter().map(|&l| l as usize).collect()
}

/// Mean query cross-entropy of `params` on `episode`.
pub fn loss_on_episode(params: &ModelParams<f32>, episode: &Episode) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let logits = forward_on_tape(&mut tape, &vars, params.config(), &episode.context, &episode.query)?;
    let loss = tape.cross_entropy(logits, &query_targets(episode))?;
    Ok(tape.value(loss).data()[0].into())
}

pub fn episode_gradient(params: &ModelParams<f32>, episode: &Episode) -> Result<EpisodeGrad> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, true);
    let logits = forward_on_tape(&mut tape, &vars, params.config(), &episode.context, &episode.query)?;
    let targets = query_targets(episode);
    let loss_var = tape.cross_entropy(logits, &targets)?;
    let loss = f64::from(tape.value(loss_var).data()[0]);
    if !loss.is_finite() {
        return Err(Error::Numeric("non-finite episode loss".into()));
    }
    let lg = tape.value(logits);
    let correct = (0..lg.rows())
        .filter(|&i| usize::from(lg.at(i, 1) > lg.at(i, 0)) == targets[i])
        .count();
    let mut grads = tape.backward(loss_var)?;
    let grads = vars
        .all()
        .iter()
        .zip(params.tensors())
        .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    Ok(EpisodeGrad {
        loss,
        correct,
        queries: targets.len(),
        grads,
    })
}

/// Gradient of the mean loss over `batch_episodes · grad_accum` episodes,
/// accumulated micro-batch by micro-batch in index order.
pub struct StepOutcome {
    pub loss: f64,
    pub acc: f64,
    pub grads: Vec<Tensor<f32>>,
}

pub fn step_gradient(cfg: &TrainConfig, params: &ModelParams<f32>, step: u64) -> Result<StepOutcome> {
    let mut total: Vec<Tensor<f32>> = params.tensors().iter().map(|p| Tensor::zeros(p.shape())).collect();
    let (mut loss, mut correct, mut queries) = (0.0, 0usize, 0usize);
    let prior = PriorConfig {
        seed: cfg.seed,
        ..cfg.prior.clone()
    };
    for a in 0..cfg.grad_accum {
        let results: Vec<Result<EpisodeGrad>> = (0..cfg.batch_episodes)
            .into_par_iter()
            .map(|b| {
                let mut rng = episode_rng(cfg.seed, cfg.episode_index(step, a, b));
                let episode = sample_pretraining_episode(&prior, &mut rng)?;
                episode_gradient(params, &episode)
            })
            .collect();
        let mut micro: Vec<Tensor<f32>> = params.tensors().iter().map(|p| Tensor::zeros(p.shape())).collect();
        for r in results {
            let g = r?;
            loss += g.loss;
            correct += g.correct;
            queries += g.queries;
            for (m, t) in micro.iter_mut().zip(&g.grads) {
                m.add_assign(t)?;
            }
        }
        for (t, m) in total.iter_mut().zip(micro.iter_mut()) {
            m.scale(1.0 / cfg.batch_episodes as f32);
            t.add_assign(m)?;
        }
    }
    for t in &mut total {
        t.scale(1.0 / cfg.grad_accum as f32);
    }
    Ok(StepOutcome {
        loss: loss / cfg.episodes_per_step() as f64,
        acc: correct as f64 / queries.max(1) as f64,
        grads: total,
    })
}

fn global_norm(grads: &[Tensor<f32>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|&x| f64::from(x) * f64::from(x))
        .sum::<f64>()
        .sqrt()
}

/// Runs `cfg.steps` Adam updates under a cosine schedule. Checkpoints go to
/// `out_dir` when given (`step_<n>.ckpt` periodically, `final.ckpt` at the
/// end). A non-finite loss or gradient aborts; earlier checkpoints remain.
pub fn pretrain(cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<(ModelParams<f32>, TrainLog)> {
    cfg.validate()?;
    let mut params = ModelParams::<f32>::init(cfg.model.clone(), &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let mut adam = AdamState::new(params.tensors(), AdamConfig::default());
    let mut log = TrainLog::default();
    let start = Instant::now();
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    for step in 0..cfg.steps {
        let lr = cosine_lr(step, cfg.steps, cfg.lr0);
        let mut out = step_gradient(cfg, &params, step)?;
        let norm = global_norm(&out.grads);
        if !norm.is_finite() {
            return Err(Error::Numeric(format!("non-finite gradient norm at step {step}")));
        }
        if norm > CLIP_NORM {
            log::warn!("step {step}: gradient norm {norm:.3e} clipped to {CLIP_NORM}");
            let s = (CLIP_NORM / norm) as f32;
            out.grads.iter_mut().for_each(|g| g.scale(s));
            log.clipped_steps.push(step);
        }
        adam.step(params.tensors_mut(), &out.grads, lr)?;
        log.step_losses.push(out.loss);
        let done = step + 1;
        if done % cfg.log_every == 0 || done == cfg.steps {
            let rec = LogRecord {
                step: done,
                lr,
                loss: out.loss,
                acc: out.acc,
                seconds: start.elapsed().as_secs_f64(),
            };
            log::info!(
                "step {} lr {:.3e} loss {:.4} acc {:.3} ({:.0}s)",
                rec.step,
                rec.lr,
                rec.loss,
                rec.acc,
                rec.seconds
            );
            log.records.push(rec);
        }
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.steps {
                save_checkpoint(&params, dir.join(format!("step_{done}.ckpt")))?;
            }
        }
    }
    if let Some(dir) = out_dir {
        let path = dir.join("final.ckpt");
        save_checkpoint(&params, &path)?;
        log.write_csv(dir.join("train_log.csv"))?;
        log.checkpoint = Some(path);
    }
    Ok((params, log))
}
