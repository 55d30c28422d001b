//! BPR pretraining of the user-item predictor on an internal split of X.
//!
//! MF-BPR is LightGCN with zero propagation layers, so both kinds share one
//! training loop: propagate, score, BPR gradient, transposed propagation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::predictor::{FactorPredictor, PredictorKind};
use crate::dataset::{group_by_left, InteractionDataset, Pair};
use crate::error::{EbrecError, Result};
use crate::eval::{recall_at_k, top_k};
use crate::graph::BipartiteGraph;
use crate::matrix::{axpy, dot, Matrix};
use crate::model::ParameterSet;
use crate::objective::{sigmoid, softplus};
use crate::optim::{adaptive_update, AdamConfig, AdamState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub predictor: PredictorKind,
    pub dim: usize,
    /// Propagation depth for `lightgcn_ui`; ignored by `mf_bpr`.
    pub layers: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2: f64,
    /// Fraction of U-I pairs used for predictor training; the rest validate.
    pub train_fraction: f64,
    pub split_seed: u64,
    pub seed: u64,
    pub eval_interval: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            predictor: PredictorKind::MfBpr,
            dim: 64,
            layers: 2,
            epochs: 50,
            batch_size: 2048,
            learning_rate: 1e-3,
            l2: 1e-5,
            train_fraction: 0.9,
            split_seed: 7,
            seed: 42,
            eval_interval: 5,
            patience: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PretrainEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub recall_at_20: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PretrainReport {
    pub predictor: PredictorKind,
    pub train_pairs: usize,
    pub valid_pairs: usize,
    pub valid_users: usize,
    /// Internal-split Recall@20 of the untrained initialization.
    pub initial_recall_at_20: Option<f64>,
    pub best_recall_at_20: Option<f64>,
    pub best_epoch: Option<usize>,
    pub trace: Vec<PretrainEpoch>,
}

#[derive(Clone, Debug)]
pub enum PretrainOutcome {
    Trained {
        predictor: FactorPredictor,
        report: PretrainReport,
    },
    /// No U-I interactions to learn from; augmentation is skipped.
    Disabled { reason: String },
}

/// Shuffles `pairs` with `seed` and holds out `floor(n · (1 - train_fraction))`.
pub fn split_pairs(pairs: &[Pair], train_fraction: f64, seed: u64) -> Result<(Vec<Pair>, Vec<Pair>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(EbrecError::contract(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let mut shuffled = pairs.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_valid = (pairs.len() as f64 * (1.0 - train_fraction) + 1e-9).floor() as usize;
    let mut valid = shuffled[..n_valid].to_vec();
    let mut train = shuffled[n_valid..].to_vec();
    train.sort_unstable();
    valid.sort_unstable();
    Ok((train, valid))
}

struct Trainer<'a> {
    graph: BipartiteGraph,
    layers: usize,
    train_items: Vec<Vec<usize>>,
    valid_items: &'a [Vec<usize>],
    num_items: usize,
}

impl Trainer<'_> {
    fn embeddings(&self, users: &Matrix, items: &Matrix) -> Result<(Matrix, Matrix)> {
        self.graph.propagate_fused(users, items, self.layers)
    }

    fn recall_at_20(&self, users: &Matrix, items: &Matrix) -> Option<f64> {
        let evaluated: Vec<usize> = (0..self.valid_items.len())
            .filter(|&u| !self.valid_items[u].is_empty())
            .collect();
        if evaluated.is_empty() {
            return None;
        }
        let total: f64 = evaluated
            .par_iter()
            .map(|&u| {
                let row = users.row(u);
                let scores: Vec<f64> = (0..self.num_items).map(|i| dot(row, items.row(i))).collect();
                let ranked = top_k(&scores, &self.train_items[u], 20);
                recall_at_k(&ranked, &self.valid_items[u], 20)
            })
            .collect::<Vec<f64>>()
            .iter()
            .sum();
        Some(total / evaluated.len() as f64)
    }

    fn sample_negative(&self, user: usize, rng: &mut ChaCha8Rng) -> Option<usize> {
        let positives = &self.train_items[user];
        if positives.len() >= self.num_items {
            return None;
        }
        loop {
            let cand = rng.random_range(0..self.num_items);
            if positives.binary_search(&cand).is_err() {
                return Some(cand);
            }
        }
    }
}

pub fn pretrain_predictor(ds: &InteractionDataset, cfg: &PretrainConfig) -> Result<PretrainOutcome> {
    if ds.ui_pairs.is_empty() {
        return Ok(PretrainOutcome::Disabled {
            reason: "dataset has no user-item interactions".into(),
        });
    }
    if cfg.batch_size == 0 || cfg.dim == 0 {
        return Err(EbrecError::contract("batch size and width must be positive"));
    }
    let (train, valid) = split_pairs(&ds.ui_pairs, cfg.train_fraction, cfg.split_seed)?;
    let valid_items = group_by_left(&valid, ds.num_users);
    let layers = match cfg.predictor {
        PredictorKind::MfBpr => 0,
        PredictorKind::LightgcnUi => cfg.layers,
    };
    let trainer = Trainer {
        graph: BipartiteGraph::build(&train, ds.num_users, ds.num_items)?,
        layers,
        train_items: group_by_left(&train, ds.num_users),
        valid_items: &valid_items,
        num_items: ds.num_items,
    };

    let init = ParameterSet::init(ds.num_users, ds.num_items, 0, cfg.dim, true, cfg.seed)?;
    let mut users = init.users_bundle_level;
    let mut items = init.items_item_level;
    let adam = AdamConfig::default();
    let mut user_state = AdamState::new(users.as_slice().len());
    let mut item_state = AdamState::new(items.as_slice().len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed);

    let snapshot = |u: &Matrix, i: &Matrix| -> Result<FactorPredictor> {
        let (fu, fi) = trainer.embeddings(u, i)?;
        Ok(FactorPredictor {
            kind: cfg.predictor,
            users: fu,
            items: fi,
        })
    };

    let initial = snapshot(&users, &items)?;
    let initial_recall = trainer.recall_at_20(&initial.users, &initial.items);
    let mut best: Option<(f64, usize, FactorPredictor)> = None;
    let mut stale = 0;
    let mut trace = Vec::new();
    let mut order = train.clone();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut count = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let triplets: Vec<(usize, usize, usize)> = chunk
                .iter()
                .filter_map(|&(u, i)| Some((u, i, trainer.sample_negative(u, &mut rng)?)))
                .collect();
            if triplets.is_empty() {
                continue;
            }
            let (fu, fi) = trainer.embeddings(&users, &items)?;
            let mut gu = Matrix::zeros(fu.rows(), fu.dim());
            let mut gi = Matrix::zeros(fi.rows(), fi.dim());
            let n = triplets.len() as f64;
            for &(u, p, q) in &triplets {
                let margin = dot(fu.row(u), fi.row(p)) - dot(fu.row(u), fi.row(q));
                loss_sum += softplus(-margin);
                count += 1;
                let c = -sigmoid(-margin) / n;
                axpy(c, fi.row(p), gu.row_mut(u));
                axpy(-c, fi.row(q), gu.row_mut(u));
                axpy(c, fu.row(u), gi.row_mut(p));
                axpy(-c, fu.row(u), gi.row_mut(q));
            }
            let (mut gu0, mut gi0) = trainer.graph.backpropagate(&gu, &gi, layers)?;
            axpy(2.0 * cfg.l2, users.as_slice(), gu0.as_mut_slice());
            axpy(2.0 * cfg.l2, items.as_slice(), gi0.as_mut_slice());
            adaptive_update(users.as_mut_slice(), gu0.as_slice(), &mut user_state, cfg.learning_rate, &adam)
                .map_err(|e| with_epoch(e, epoch))?;
            adaptive_update(items.as_mut_slice(), gi0.as_slice(), &mut item_state, cfg.learning_rate, &adam)
                .map_err(|e| with_epoch(e, epoch))?;
        }
        let loss = if count > 0 { loss_sum / count as f64 } else { 0.0 };
        if !loss.is_finite() {
            return Err(EbrecError::NonFinite {
                component: "predictor bpr loss".into(),
                epoch: Some(epoch),
            });
        }

        let evaluate = epoch % cfg.eval_interval.max(1) == 0 || epoch == cfg.epochs;
        let mut recall = None;
        if evaluate {
            let snap = snapshot(&users, &items)?;
            recall = trainer.recall_at_20(&snap.users, &snap.items);
            log::info!("pretrain epoch {epoch}: loss {loss:.5} recall@20 {recall:?}");
            match (recall, &best) {
                (Some(r), Some((b, _, _))) if r <= *b => stale += 1,
                (Some(r), _) => {
                    best = Some((r, epoch, snap));
                    stale = 0;
                }
                // no validation pairs: keep the latest snapshot
                (None, _) => best = Some((f64::NAN, epoch, snap)),
            }
        }
        trace.push(PretrainEpoch {
            epoch,
            loss,
            recall_at_20: recall,
        });
        if recall.is_some() && stale >= cfg.patience.max(1) {
            log::info!("pretrain early stop at epoch {epoch}");
            break;
        }
    }

    let (best_recall, best_epoch, predictor) = match best {
        Some((r, e, p)) => ((!r.is_nan()).then_some(r), Some(e), p),
        None => (initial_recall, None, initial),
    };
    Ok(PretrainOutcome::Trained {
        predictor,
        report: PretrainReport {
            predictor: cfg.predictor,
            train_pairs: train.len(),
            valid_pairs: valid.len(),
            valid_users: valid_items.iter().filter(|v| !v.is_empty()).count(),
            initial_recall_at_20: initial_recall,
            best_recall_at_20: best_recall,
            best_epoch,
            trace,
        },
    })
}

fn with_epoch(err: EbrecError, epoch: usize) -> EbrecError {
    match err {
        EbrecError::NonFinite { component, .. } => EbrecError::NonFinite {
            component,
            epoch: Some(epoch),
        },
        other => other,
    }
}
