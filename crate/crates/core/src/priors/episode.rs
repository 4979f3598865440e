use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::classification::{ClassificationGenerator, ROWS_PER_CLASS};
use super::gmm::sample_gmm_dataset;
use super::{AnomalyKind, LabeledDataset, PriorConfig, Protocol};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scaling::MinMaxScaler;

const SOURCE_RETRIES: usize = 8;
/// Rows a classification generator may draw per needed row before it is
/// abandoned for a fresh one.
const DRAW_BUDGET: usize = 40;

/// Context plus query rows. Labels are carried for the loss and for
/// diagnostics; the model only reads `context` and `query`.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub context: Matrix,
    pub query: Matrix,
    pub query_labels: Vec<u8>,
    pub context_labels: Option<Vec<u8>>,
    pub d: usize,
    pub kind: Option<AnomalyKind>,
}

impl Episode {
    pub fn new(context: Matrix, query: Matrix, query_labels: Vec<u8>, context_labels: Option<Vec<u8>>) -> Result<Self> {
        if context.rows() == 0 || query.rows() == 0 {
            return Err(Error::Input(
                "episode needs at least one context and one query row".into(),
            ));
        }
        if context.cols() != query.cols() {
            return Err(Error::Dimension {
                op: "episode",
                lhs: vec![context.rows(), context.cols()],
                rhs: vec![query.rows(), query.cols()],
            });
        }
        if query_labels.len() != query.rows() || context_labels.as_ref().is_some_and(|l| l.len() != context.rows()) {
            return Err(Error::Input("label count does not match row count".into()));
        }
        let d = context.cols();
        Ok(Self {
            context,
            query,
            query_labels,
            context_labels,
            d,
            kind: None,
        })
    }

    pub fn context_anomalies(&self) -> usize {
        self.context_labels
            .as_ref()
            .map_or(0, |l| l.iter().filter(|&&x| x == 1).count())
    }

    /// Rescales both sides with min/max statistics of the context.
    pub fn scaled_to_context(mut self) -> Self {
        let scaler = MinMaxScaler::fit(&self.context);
        self.context = scaler.transform(&self.context);
        self.query = scaler.transform(&self.query);
        self
    }
}

/// Deterministic per-episode stream.
pub fn episode_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Nominal and anomalous context counts for a context of `n_ctx` rows.
fn context_counts<R: Rng>(cfg: &PriorConfig, n_ctx: usize, rng: &mut R) -> Result<(usize, usize)> {
    match cfg.protocol {
        Protocol::Clean => Ok((n_ctx, 0)),
        Protocol::Noisy => {
            let c = cfg.contamination_range;
            let r = if c.lo < c.hi {
                rng.random_range(c.lo..=c.hi)
            } else {
                c.lo
            };
            let mut nom = ((n_ctx as f64) / (1.0 + r)).round() as usize;
            nom = nom.clamp(1, n_ctx.saturating_sub(1));
            // Keep the realised ratio inside the configured interval.
            while nom > 1 && ((n_ctx - nom) as f64) < c.lo * nom as f64 {
                nom -= 1;
            }
            while nom < n_ctx - 1 && ((n_ctx - nom) as f64) > c.hi * nom as f64 {
                nom += 1;
            }
            let anom = n_ctx - nom;
            if nom == 0 || anom == 0 {
                return Err(Error::Generation(format!(
                    "context of {n_ctx} rows cannot hold a contaminated split"
                )));
            }
            Ok((nom, anom))
        }
    }
}

fn assemble_with_counts<R: Rng>(
    source: &LabeledDataset,
    query_size: usize,
    ctx_nom: usize,
    ctx_anom: usize,
    rng: &mut R,
) -> Result<Episode> {
    let half = query_size / 2;
    let mut nominal = source.indices_with_label(0);
    let mut anomalous = source.indices_with_label(1);
    let (need_nom, need_anom) = (half + ctx_nom, half + ctx_anom);
    if nominal.len() < need_nom || anomalous.len() < need_anom {
        return Err(Error::Generation(format!(
            "source has {} nominal / {} anomalous rows, episode needs {need_nom} / {need_anom}",
            nominal.len(),
            anomalous.len()
        )));
    }
    nominal.shuffle(rng);
    anomalous.shuffle(rng);
    let mut query: Vec<usize> = nominal[..half].iter().chain(&anomalous[..half]).copied().collect();
    let mut context: Vec<usize> = nominal[half..need_nom]
        .iter()
        .chain(&anomalous[half..need_anom])
        .copied()
        .collect();
    query.shuffle(rng);
    context.shuffle(rng);
    let labels = |idx: &[usize]| idx.iter().map(|&i| source.labels[i]).collect::<Vec<u8>>();
    let mut ep = Episode::new(
        source.features.select_rows(&context),
        source.features.select_rows(&query),
        labels(&query),
        Some(labels(&context)),
    )?;
    ep.kind = source.anomaly_kind;
    Ok(ep)
}

/// Splits a labelled source into a balanced query of `cfg.query_size` rows
/// and a context of `total_rows - query_size` rows. Clean contexts are purely
/// nominal; noisy contexts hold `r · n_nominal` anomalies (rounded, at least
/// one) with `r ~ U(contamination_range)`.
pub fn assemble_episode<R: Rng>(
    source: &LabeledDataset,
    cfg: &PriorConfig,
    total_rows: usize,
    rng: &mut R,
) -> Result<Episode> {
    if total_rows <= cfg.query_size {
        return Err(Error::Input(format!(
            "{total_rows} rows leave no context beside {} query rows",
            cfg.query_size
        )));
    }
    let (nom, anom) = context_counts(cfg, total_rows - cfg.query_size, rng)?;
    assemble_with_counts(source, cfg.query_size, nom, anom, rng)
}

fn absorb(nominal: &mut Matrix, anomalous: &mut Matrix, need: (usize, usize), x: &Matrix, labels: &[u8]) -> Result<()> {
    for (row, &l) in x.iter_rows().zip(labels) {
        match l {
            0 if nominal.rows() < need.0 => nominal.push_row(row)?,
            1 if anomalous.rows() < need.1 => anomalous.push_row(row)?,
            _ => {}
        }
    }
    Ok(())
}

fn classification_source<R: Rng>(
    cfg: &PriorConfig,
    need_nom: usize,
    need_anom: usize,
    rng: &mut R,
) -> Result<LabeledDataset> {
    let need = need_nom + need_anom;
    for _ in 0..SOURCE_RETRIES {
        let mut generator = ClassificationGenerator::sample(cfg, rng);
        let first = generator.dataset(need.max(generator.classes * ROWS_PER_CLASS), cfg.seed, rng);
        let Ok(first) = first else { continue };
        let mut nominal = Matrix::with_cols(generator.d);
        let mut anomalous = Matrix::with_cols(generator.d);
        let mut drawn = first.len();
        absorb(
            &mut nominal,
            &mut anomalous,
            (need_nom, need_anom),
            &first.features,
            &first.labels,
        )?;
        while (nominal.rows() < need_nom || anomalous.rows() < need_anom) && drawn < DRAW_BUDGET * need {
            let (x, cls) = generator.draw(need, rng);
            let labels = super::label_by_classes(&cls, &generator.nominal_classes);
            absorb(&mut nominal, &mut anomalous, (need_nom, need_anom), &x, &labels)?;
            drawn += need;
        }
        if nominal.rows() == need_nom && anomalous.rows() == need_anom {
            let mut labels = vec![0u8; need_nom];
            labels.extend(std::iter::repeat_n(1u8, need_anom));
            return LabeledDataset::new(
                nominal.stack(&anomalous)?,
                labels,
                Some(AnomalyKind::ClassBased),
                generator.provenance(cfg.seed),
            );
        }
    }
    Err(Error::Generation(format!(
        "no classification source yielded {need_nom} nominal and {need_anom} anomalous rows in {SOURCE_RETRIES} attempts"
    )))
}

/// One pretraining episode: a GMM source with probability `prob_gmm`
/// (mechanism uniform over local, cluster, global), otherwise a
/// classification source, assembled with `total rows ~ U(episode_rows_range)`
/// and rescaled to the context's min/max frame.
pub fn sample_pretraining_episode<R: Rng>(cfg: &PriorConfig, rng: &mut R) -> Result<Episode> {
    let total = rng.random_range(cfg.episode_rows_range.lo..=cfg.episode_rows_range.hi);
    if total <= cfg.query_size {
        return Err(Error::Config(format!(
            "episode of {total} rows leaves no context beside {} query rows",
            cfg.query_size
        )));
    }
    let (ctx_nom, ctx_anom) = context_counts(cfg, total - cfg.query_size, rng)?;
    let half = cfg.query_size / 2;
    let (need_nom, need_anom) = (half + ctx_nom, half + ctx_anom);
    let use_gmm = rng.random::<f64>() < cfg.prob_gmm;
    let source = if use_gmm {
        let kind = AnomalyKind::GMM_KINDS[rng.random_range(0..3)];
        sample_gmm_dataset(cfg, kind, need_nom, need_anom, cfg.seed, rng)?.1
    } else {
        classification_source(cfg, need_nom, need_anom, rng)?
    };
    Ok(assemble_with_counts(&source, cfg.query_size, ctx_nom, ctx_anom, rng)?.scaled_to_context())
}

/// Episodes `start..start + count`, each from its own indexed stream, so the
/// result is independent of thread count.
pub fn sample_pretraining_episodes(cfg: &PriorConfig, start: u64, count: usize) -> Result<Vec<Episode>> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| sample_pretraining_episode(cfg, &mut episode_rng(cfg.seed, start + i)))
        .collect()
}
