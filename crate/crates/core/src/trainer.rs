//! Optimization loop: per-epoch edge dropout, triplet batching, Adam updates,
//! validation by NDCG@20 and best-snapshot selection.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augmentor::{AugmentedNeighbors, STANDARD_K_AUG};
use crate::composer::ComposerInputs;
use crate::dataset::{group_by_left, group_by_right, pair_set, InteractionDataset, Split};
use crate::error::{EbrecError, Result};
use crate::eval::{rank_all, EvalOptions, Metric};
use crate::graph::BipartiteGraph;
use crate::model::{forward, ForwardContext, ParameterSet, ViewEmbeddings};
use crate::objective::{loss_and_gradients, Batch, Hyper, LossBreakdown, Triplet};
use crate::optim::{adaptive_update, AdamConfig, AdamState};

pub const LAMBDA1_GRID: [f64; 5] = [0.01, 0.04, 0.1, 0.5, 1.0];
pub const LAMBDA2_GRID: [f64; 5] = [1e-5, 2e-5, 4e-5, 1e-4, 1e-3];
pub const TAU_GRID: [f64; 7] = [0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5];

/// Which enhancement modules are active.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ablation {
    /// Mediated pathway over augmented user-item sets.
    #[default]
    #[serde(rename = "full")]
    Full,
    /// Mediated pathway over observed user-item sets only.
    #[serde(rename = "ebrec-c")]
    EbrecC,
    /// Affiliation pathway only, no augmentation.
    #[serde(rename = "ebrec-e")]
    EbrecE,
}

impl Ablation {
    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::EbrecC => "ebrec-c",
            Ablation::EbrecE => "ebrec-e",
        }
    }

    pub fn uses_mediated(self) -> bool {
        !matches!(self, Ablation::EbrecE)
    }

    pub fn uses_augmentation(self) -> bool {
        matches!(self, Ablation::Full)
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = EbrecError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Ablation::Full),
            "ebrec-c" => Ok(Ablation::EbrecC),
            "ebrec-e" => Ok(Ablation::EbrecE),
            other => Err(EbrecError::contract(format!(
                "unknown ablation `{other}` (expected full, ebrec-c or ebrec-e)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dim: usize,
    pub layers: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub tau: f64,
    pub k_aug: usize,
    pub dropout_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub eval_interval: usize,
    /// Evaluation intervals without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub ablation: Ablation,
    pub shared_user_embedding: bool,
    /// Also add generated pairs to the item-level propagation graph.
    pub augment_propagation_graph: bool,
    pub mask_valid_at_test: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 64,
            layers: 2,
            lambda1: 0.1,
            lambda2: 4e-5,
            tau: 0.25,
            k_aug: 10,
            dropout_rate: 0.2,
            batch_size: 2048,
            epochs: 100,
            learning_rate: 1e-3,
            eval_interval: 1,
            patience: 20,
            seed: 42,
            ablation: Ablation::Full,
            shared_user_embedding: false,
            augment_propagation_graph: false,
            mask_valid_at_test: true,
        }
    }
}

fn on_grid(v: f64, grid: &[f64]) -> bool {
    grid.iter().any(|g| (g - v).abs() <= 1e-12 * g.abs().max(1.0))
}

impl TrainConfig {
    /// Rejects unusable values; returns warnings for values off the tuning grids.
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.dim == 0 || self.batch_size == 0 || self.eval_interval == 0 {
            return Err(EbrecError::contract("dim, batch_size and eval_interval must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(EbrecError::contract(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        let non_negative = |v: f64| v >= 0.0 && v.is_finite();
        if !positive(self.tau) || !positive(self.learning_rate) || !non_negative(self.lambda1) || !non_negative(self.lambda2) {
            return Err(EbrecError::contract(
                "tau and learning_rate must be positive, lambdas non-negative",
            ));
        }
        let mut warnings = Vec::new();
        if self.dim != 64 {
            warnings.push(format!("dim {} differs from the standard 64", self.dim));
        }
        if !on_grid(self.lambda1, &LAMBDA1_GRID) {
            warnings.push(format!("lambda1 {} is off the grid {LAMBDA1_GRID:?}", self.lambda1));
        }
        if !on_grid(self.lambda2, &LAMBDA2_GRID) {
            warnings.push(format!("lambda2 {} is off the grid {LAMBDA2_GRID:?}", self.lambda2));
        }
        if !on_grid(self.tau, &TAU_GRID) {
            warnings.push(format!("tau {} is off the grid {TAU_GRID:?}", self.tau));
        }
        if !STANDARD_K_AUG.contains(&self.k_aug) {
            warnings.push(format!("k_aug {} is off the grid {STANDARD_K_AUG:?}", self.k_aug));
        }
        Ok(warnings)
    }

    pub fn hyper(&self) -> Hyper {
        Hyper {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            tau: self.tau,
        }
    }

    /// `k_aug` after the ablation is applied.
    pub fn effective_k_aug(&self) -> usize {
        if self.ablation.uses_augmentation() {
            self.k_aug
        } else {
            0
        }
    }
}

/// Full (undropped) graphs and composition structure for one configuration.
#[derive(Clone, Debug)]
pub struct ModelInputs {
    pub ub_graph: BipartiteGraph,
    pub ui_graph: BipartiteGraph,
    pub composer: ComposerInputs,
    pub use_mediated: bool,
    pub layers: usize,
}

impl ModelInputs {
    /// Graphs are built from training interactions only. `aug` is ignored
    /// (observed sets are used) unless the ablation enables augmentation.
    pub fn new(ds: &InteractionDataset, aug: &AugmentedNeighbors, cfg: &TrainConfig) -> Result<Self> {
        if aug.num_users() != ds.num_users || aug.num_items() != ds.num_items {
            return Err(EbrecError::contract(format!(
                "augmentation covers {}x{}, dataset has {} users x {} items",
                aug.num_users(),
                aug.num_items(),
                ds.num_users,
                ds.num_items
            )));
        }
        aug.check_observed(ds)?;
        let use_aug = cfg.ablation.uses_augmentation();
        let ui_pairs = if use_aug && cfg.augment_propagation_graph {
            aug.pairs()
        } else {
            ds.ui_pairs.clone()
        };
        let user_items = if use_aug {
            aug.user_items()
        } else {
            group_by_left(&ds.ui_pairs, ds.num_users)
        };
        Ok(ModelInputs {
            ub_graph: BipartiteGraph::build(&ds.ub_train, ds.num_users, ds.num_bundles)?,
            ui_graph: BipartiteGraph::build(&ui_pairs, ds.num_users, ds.num_items)?,
            composer: ComposerInputs::new(
                ds.num_items,
                group_by_left(&ds.bi_pairs, ds.num_bundles),
                group_by_right(&ds.ub_train, ds.num_bundles),
                user_items,
            )?,
            use_mediated: cfg.ablation.uses_mediated(),
            layers: cfg.layers,
        })
    }

    pub fn context(&self) -> ForwardContext<'_> {
        ForwardContext {
            ub_graph: &self.ub_graph,
            ui_graph: &self.ui_graph,
            composer: &self.composer,
            use_mediated: self.use_mediated,
            layers: self.layers,
        }
    }

    pub fn views(&self, params: &ParameterSet) -> Result<ViewEmbeddings> {
        forward(params, &self.context())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over the epoch's batches.
    pub loss: LossBreakdown,
    pub batches: usize,
    pub floored_rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationRecord {
    pub epoch: usize,
    pub recall_at_20: f64,
    pub ndcg_at_20: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub validation: Vec<ValidationRecord>,
    pub best_epoch: Option<usize>,
    pub best_ndcg_at_20: Option<f64>,
    pub stopped_early: bool,
    /// Wall-clock seconds per epoch; the only non-deterministic field.
    pub epoch_seconds: Vec<f64>,
}

impl TrainReport {
    /// The report without timings, for reproducibility comparisons.
    pub fn without_timings(&self) -> TrainReport {
        TrainReport {
            epoch_seconds: Vec::new(),
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub params: ParameterSet,
    pub report: TrainReport,
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

/// Uniform negative among bundles the user has not interacted with in training.
fn sample_negative(positives: &[usize], num_bundles: usize, rng: &mut ChaCha8Rng) -> Option<usize> {
    if positives.len() >= num_bundles {
        return None;
    }
    loop {
        let b = rng.random_range(0..num_bundles);
        if positives.binary_search(&b).is_err() {
            return Some(b);
        }
    }
}

/// Validation Recall@20 and NDCG@20 of `params` on the full graphs.
pub fn validate(
    params: &ParameterSet,
    inputs: &ModelInputs,
    ds: &InteractionDataset,
    cfg: &TrainConfig,
) -> Result<(f64, f64)> {
    let views = inputs.views(params)?;
    let opts = EvalOptions {
        mask_valid_at_test: cfg.mask_valid_at_test,
    };
    let res = rank_all(&views, ds, Split::Valid, &[20], opts)?;
    Ok((
        res.get(Metric::Recall, 20).unwrap_or(0.0),
        res.get(Metric::Ndcg, 20).unwrap_or(0.0),
    ))
}

/// Trains from a fresh initialization and returns the snapshot with the best
/// validation NDCG@20.
pub fn train(ds: &InteractionDataset, aug: &AugmentedNeighbors, cfg: &TrainConfig) -> Result<TrainOutput> {
    for w in cfg.validate()? {
        log::warn!("{w}");
    }
    let inputs = ModelInputs::new(ds, aug, cfg)?;
    let mut params = ParameterSet::init(
        ds.num_users,
        ds.num_items,
        ds.num_bundles,
        cfg.dim,
        cfg.shared_user_embedding,
        cfg.seed,
    )?;
    let mut report = TrainReport::default();
    if cfg.epochs == 0 {
        return Ok(TrainOutput { params, report });
    }

    let hyper = cfg.hyper();
    let adam = AdamConfig::default();
    let mut states: Vec<AdamState> = params
        .tables()
        .iter()
        .map(|t| AdamState::new(t.as_slice().len()))
        .collect();
    let user_bundles = group_by_left(&ds.ub_train, ds.num_users);
    let train_set: HashSet<_> = pair_set(&ds.ub_train);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7a11_b0de);
    let mut order = ds.ub_train.clone();
    let mut best: Option<(f64, ParameterSet)> = None;
    let mut stale = 0;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let ub_graph = inputs.ub_graph.edge_dropout(cfg.dropout_rate, rng.random())?;
        let ui_graph = inputs.ui_graph.edge_dropout(cfg.dropout_rate, rng.random())?;
        let ctx = ForwardContext {
            ub_graph: &ub_graph,
            ui_graph: &ui_graph,
            ..inputs.context()
        };

        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        let mut batches = 0usize;
        let mut floored_rows = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let triplets: Vec<Triplet> = chunk
                .iter()
                .filter_map(|&(u, b)| {
                    Some(Triplet {
                        user: u,
                        positive: b,
                        negative: sample_negative(&user_bundles[u], ds.num_bundles, &mut rng)?,
                    })
                })
                .collect();
            if triplets.is_empty() {
                continue;
            }
            let batch = Batch::new(triplets);
            debug_assert!(batch.validate(&train_set).is_ok());
            let out = loss_and_gradients(&params, &batch, &hyper, &ctx).map_err(|e| with_epoch(e, epoch))?;
            for ((table, grad), state) in params
                .tables_mut()
                .into_iter()
                .zip(out.gradients.tables())
                .zip(states.iter_mut())
            {
                adaptive_update(table.as_mut_slice(), grad.as_slice(), state, cfg.learning_rate, &adam)
                    .map_err(|e| with_epoch(e, epoch))?;
            }
            sum.bpr += out.breakdown.bpr;
            sum.contrast_user += out.breakdown.contrast_user;
            sum.contrast_bundle += out.breakdown.contrast_bundle;
            sum.l2 += out.breakdown.l2;
            sum.total += out.breakdown.total;
            floored_rows += out.floored_rows;
            batches += 1;
        }
        let mean = |v: f64| if batches > 0 { v / batches as f64 } else { 0.0 };
        let loss = LossBreakdown {
            bpr: mean(sum.bpr),
            contrast_user: mean(sum.contrast_user),
            contrast_bundle: mean(sum.contrast_bundle),
            l2: mean(sum.l2),
            total: mean(sum.total),
        };
        report.epochs.push(EpochRecord {
            epoch,
            loss,
            batches,
            floored_rows,
        });

        let mut stop = false;
        if epoch % cfg.eval_interval == 0 || epoch == cfg.epochs {
            let (recall, ndcg) = validate(&params, &inputs, ds, cfg)?;
            log::info!(
                "epoch {epoch}: loss {:.5} (bpr {:.5}, cu {:.4}, cb {:.4}) valid recall@20 {recall:.4} ndcg@20 {ndcg:.4}",
                loss.total, loss.bpr, loss.contrast_user, loss.contrast_bundle
            );
            report.validation.push(ValidationRecord {
                epoch,
                recall_at_20: recall,
                ndcg_at_20: ndcg,
            });
            match &best {
                Some((b, _)) if ndcg <= *b => stale += 1,
                _ => {
                    best = Some((ndcg, params.clone()));
                    report.best_epoch = Some(epoch);
                    report.best_ndcg_at_20 = Some(ndcg);
                    stale = 0;
                }
            }
            if stale >= cfg.patience.max(1) && epoch < cfg.epochs {
                report.stopped_early = true;
                stop = true;
            }
        } else {
            log::info!("epoch {epoch}: loss {:.5}", loss.total);
        }
        report.epoch_seconds.push(started.elapsed().as_secs_f64());
        if stop {
            log::info!("early stop after epoch {epoch}");
            break;
        }
    }

    let params = best.map(|(_, p)| p).unwrap_or(params);
    Ok(TrainOutput { params, report })
}
