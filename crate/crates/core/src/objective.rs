//! Joint training objective: BPR ranking loss, cross-view contrastive losses
//! for users and bundles, and L2 on the raw tables, with exact gradients.
//!
//! Everything between the parameter tables and the losses is linear
//! (propagation and composition), so the backward pass is the transposed
//! forward pass: [`BipartiteGraph::backpropagate`](crate::graph::BipartiteGraph::backpropagate)
//! and the composer transposes.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Pair;
use crate::error::{EbrecError, Result};
use crate::matrix::{axpy, dot, Matrix};
use crate::model::{forward, ForwardContext, ParameterSet, ViewEmbeddings};

/// Norm floor used when normalizing rows for cosine similarity.
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Triplet {
    pub user: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Training triplets plus the deduplicated users and bundles they mention,
/// which form the in-batch pools of the contrastive terms.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    triplets: Vec<Triplet>,
    users: Vec<usize>,
    bundles: Vec<usize>,
}

impl Batch {
    pub fn new(triplets: Vec<Triplet>) -> Batch {
        let mut users: Vec<usize> = triplets.iter().map(|t| t.user).collect();
        users.sort_unstable();
        users.dedup();
        let mut bundles: Vec<usize> = triplets
            .iter()
            .flat_map(|t| [t.positive, t.negative])
            .collect();
        bundles.sort_unstable();
        bundles.dedup();
        Batch {
            triplets,
            users,
            bundles,
        }
    }

    pub fn triplets(&self) -> &[Triplet] {
        &self.triplets
    }

    pub fn users(&self) -> &[usize] {
        &self.users
    }

    pub fn bundles(&self) -> &[usize] {
        &self.bundles
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    /// Checks every positive is a training interaction and every negative is not.
    pub fn validate(&self, train: &HashSet<Pair>) -> Result<()> {
        for t in &self.triplets {
            if !train.contains(&(t.user, t.positive)) {
                return Err(EbrecError::contract(format!(
                    "positive ({}, {}) is not a training interaction",
                    t.user, t.positive
                )));
            }
            if train.contains(&(t.user, t.negative)) {
                return Err(EbrecError::contract(format!(
                    "negative ({}, {}) is a training interaction",
                    t.user, t.negative
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub lambda1: f64,
    pub lambda2: f64,
    pub tau: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub bpr: f64,
    pub contrast_user: f64,
    pub contrast_bundle: f64,
    pub l2: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn combine(bpr: f64, contrast_user: f64, contrast_bundle: f64, l2: f64, hyper: &Hyper) -> Self {
        LossBreakdown {
            bpr,
            contrast_user,
            contrast_bundle,
            l2,
            total: bpr + hyper.lambda1 * (contrast_bundle + contrast_user) + hyper.lambda2 * l2,
        }
    }

    fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("bpr", self.bpr),
            ("contrast_user", self.contrast_user),
            ("contrast_bundle", self.contrast_bundle),
            ("l2", self.l2),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean of `-ln σ(pos - neg)`.
pub fn bpr_loss(positive: &[f64], negative: &[f64]) -> Result<f64> {
    if positive.len() != negative.len() {
        return Err(EbrecError::contract(format!(
            "{} positive scores vs {} negative scores",
            positive.len(),
            negative.len()
        )));
    }
    if positive.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = positive
        .iter()
        .zip(negative)
        .map(|(p, n)| softplus(-(p - n)))
        .sum();
    Ok(sum / positive.len() as f64)
}

#[derive(Clone, Debug)]
pub struct ContrastiveOutput {
    pub loss: f64,
    pub grad_a: Matrix,
    pub grad_b: Matrix,
    /// Rows whose norm fell below [`NORM_FLOOR`].
    pub floored_rows: usize,
}

fn normalize_rows(m: &Matrix) -> (Matrix, Vec<f64>) {
    let mut out = m.clone();
    let mut norms = Vec::with_capacity(m.rows());
    for r in 0..m.rows() {
        let n = dot(m.row(r), m.row(r)).sqrt().max(NORM_FLOOR);
        out.row_mut(r).iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    (out, norms)
}

/// Backward through `x / max(|x|, ε)`.
fn normalize_backward(unit: &Matrix, norms: &[f64], grad_unit: &Matrix) -> Matrix {
    let mut out = grad_unit.clone();
    for (r, &n) in norms.iter().enumerate() {
        let row = out.row_mut(r);
        if n > NORM_FLOOR {
            let proj = dot(unit.row(r), grad_unit.row(r));
            axpy(-proj, unit.row(r), row);
        }
        row.iter_mut().for_each(|v| *v /= n);
    }
    out
}

fn check_views(view_a: &Matrix, view_b: &Matrix, tau: f64) -> Result<()> {
    if !view_a.same_shape(view_b) || view_a.rows() == 0 {
        return Err(EbrecError::contract(format!(
            "contrastive views must share a non-empty shape: {}x{} vs {}x{}",
            view_a.rows(),
            view_a.dim(),
            view_b.rows(),
            view_b.dim()
        )));
    }
    if tau.is_nan() || tau <= 0.0 {
        return Err(EbrecError::contract(format!("temperature {tau} must be positive")));
    }
    Ok(())
}

/// InfoNCE over cosine similarity: row `j` of `view_a` is the anchor, row `j`
/// of `view_b` its positive and every row of `view_b` the candidate pool.
pub fn contrastive_loss(view_a: &Matrix, view_b: &Matrix, tau: f64) -> Result<f64> {
    Ok(contrastive_loss_and_grad(view_a, view_b, tau)?.loss)
}

pub fn contrastive_loss_and_grad(
    view_a: &Matrix,
    view_b: &Matrix,
    tau: f64,
) -> Result<ContrastiveOutput> {
    check_views(view_a, view_b, tau)?;
    let n = view_a.rows();
    let dim = view_a.dim();
    let (unit_a, norms_a) = normalize_rows(view_a);
    let (unit_b, norms_b) = normalize_rows(view_b);
    let floored_rows = norms_a
        .iter()
        .chain(&norms_b)
        .filter(|&&v| v <= NORM_FLOOR)
        .count();

    // coeff[j][p] = (softmax_jp - δ_jp) / n, the gradient w.r.t. logit S_jp
    let mut coeff = vec![0.0; n * n];
    let row_losses: Vec<f64> = coeff
        .par_chunks_mut(n)
        .enumerate()
        .map(|(j, c)| {
            let a = unit_a.row(j);
            for (p, cp) in c.iter_mut().enumerate() {
                *cp = dot(a, unit_b.row(p)) / tau;
            }
            let max = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = c.iter().map(|s| (s - max).exp()).sum();
            let lse = max + sum.ln();
            let loss = lse - c[j];
            for cp in c.iter_mut() {
                *cp = (*cp - lse).exp() / n as f64;
            }
            c[j] -= 1.0 / n as f64;
            loss
        })
        .collect();
    let loss = row_losses.iter().sum::<f64>() / n as f64;

    let mut grad_unit_a = Matrix::zeros(n, dim);
    let mut grad_unit_b = Matrix::zeros(n, dim);
    if dim > 0 {
        grad_unit_a
            .as_mut_slice()
            .par_chunks_mut(dim)
            .enumerate()
            .for_each(|(j, dst)| {
                for p in 0..n {
                    axpy(coeff[j * n + p] / tau, unit_b.row(p), dst);
                }
            });
        grad_unit_b
            .as_mut_slice()
            .par_chunks_mut(dim)
            .enumerate()
            .for_each(|(p, dst)| {
                for j in 0..n {
                    axpy(coeff[j * n + p] / tau, unit_a.row(j), dst);
                }
            });
    }
    Ok(ContrastiveOutput {
        loss,
        grad_a: normalize_backward(&unit_a, &norms_a, &grad_unit_a),
        grad_b: normalize_backward(&unit_b, &norms_b, &grad_unit_b),
        floored_rows,
    })
}

/// Result of [`loss_and_gradients`].
#[derive(Clone, Debug)]
pub struct LossOutput {
    pub breakdown: LossBreakdown,
    pub gradients: ParameterSet,
    pub floored_rows: usize,
}

fn check_batch(batch: &Batch, views: &ViewEmbeddings) -> Result<()> {
    let (m, o) = (views.num_users(), views.num_bundles());
    if let Some(t) = batch
        .triplets()
        .iter()
        .find(|t| t.user >= m || t.positive >= o || t.negative >= o)
    {
        return Err(EbrecError::contract(format!(
            "triplet {t:?} outside {m} users x {o} bundles"
        )));
    }
    Ok(())
}

struct Terms {
    bpr: f64,
    contrast_user: f64,
    contrast_bundle: f64,
}

/// Loss terms that depend on the propagated views (everything except L2).
fn view_terms(views: &ViewEmbeddings, batch: &Batch, tau: f64) -> Result<Terms> {
    let (pos, neg): (Vec<f64>, Vec<f64>) = batch
        .triplets()
        .iter()
        .map(|t| {
            (
                views.score_unchecked(t.user, t.positive),
                views.score_unchecked(t.user, t.negative),
            )
        })
        .unzip();
    let bpr = bpr_loss(&pos, &neg)?;
    let contrast_user = contrastive_loss(
        &views.users_bundle_level.gather(batch.users()),
        &views.users_item_level.gather(batch.users()),
        tau,
    )?;
    let contrast_bundle = contrastive_loss(
        &views.bundles_bundle_level.gather(batch.bundles()),
        &views.bundles_item_level.gather(batch.bundles()),
        tau,
    )?;
    Ok(Terms {
        bpr,
        contrast_user,
        contrast_bundle,
    })
}

/// Forward pass and loss value only.
pub fn total_loss(
    params: &ParameterSet,
    batch: &Batch,
    hyper: &Hyper,
    ctx: &ForwardContext<'_>,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(EbrecError::contract("empty batch"));
    }
    let views = forward(params, ctx)?;
    check_batch(batch, &views)?;
    let t = view_terms(&views, batch, hyper.tau)?;
    Ok(LossBreakdown::combine(
        t.bpr,
        t.contrast_user,
        t.contrast_bundle,
        params.squared_norm(),
        hyper,
    ))
}

/// Joint loss and its exact gradient with respect to every parameter table.
pub fn loss_and_gradients(
    params: &ParameterSet,
    batch: &Batch,
    hyper: &Hyper,
    ctx: &ForwardContext<'_>,
) -> Result<LossOutput> {
    if batch.is_empty() {
        return Err(EbrecError::contract("empty batch"));
    }
    let views = forward(params, ctx)?;
    check_batch(batch, &views)?;
    let dim = params.dim();
    let (m, n, o) = (params.num_users(), params.num_items(), params.num_bundles());

    let mut g_users_b = Matrix::zeros(m, dim);
    let mut g_bundles_b = Matrix::zeros(o, dim);
    let mut g_users_i = Matrix::zeros(m, dim);
    let mut g_bundles_i = Matrix::zeros(o, dim);

    // BPR
    let count = batch.len() as f64;
    let mut bpr_sum = 0.0;
    for t in batch.triplets() {
        let margin =
            views.score_unchecked(t.user, t.positive) - views.score_unchecked(t.user, t.negative);
        bpr_sum += softplus(-margin);
        let c = -sigmoid(-margin) / count;
        let (ub, ui) = (
            views.users_bundle_level.row(t.user),
            views.users_item_level.row(t.user),
        );
        let (pb, nb) = (
            views.bundles_bundle_level.row(t.positive),
            views.bundles_bundle_level.row(t.negative),
        );
        let (pi, ni) = (
            views.bundles_item_level.row(t.positive),
            views.bundles_item_level.row(t.negative),
        );
        let row = g_users_b.row_mut(t.user);
        axpy(c, pb, row);
        axpy(-c, nb, row);
        let row = g_users_i.row_mut(t.user);
        axpy(c, pi, row);
        axpy(-c, ni, row);
        axpy(c, ub, g_bundles_b.row_mut(t.positive));
        axpy(-c, ub, g_bundles_b.row_mut(t.negative));
        axpy(c, ui, g_bundles_i.row_mut(t.positive));
        axpy(-c, ui, g_bundles_i.row_mut(t.negative));
    }
    let bpr = bpr_sum / count;

    // cross-view contrastive, in-batch pools
    let users = batch.users();
    let mut cu = contrastive_loss_and_grad(
        &views.users_bundle_level.gather(users),
        &views.users_item_level.gather(users),
        hyper.tau,
    )?;
    cu.grad_a.scale(hyper.lambda1);
    cu.grad_b.scale(hyper.lambda1);
    g_users_b.scatter_add(users, &cu.grad_a);
    g_users_i.scatter_add(users, &cu.grad_b);

    let bundles = batch.bundles();
    let mut cb = contrastive_loss_and_grad(
        &views.bundles_bundle_level.gather(bundles),
        &views.bundles_item_level.gather(bundles),
        hyper.tau,
    )?;
    cb.grad_a.scale(hyper.lambda1);
    cb.grad_b.scale(hyper.lambda1);
    g_bundles_b.scatter_add(bundles, &cb.grad_a);
    g_bundles_i.scatter_add(bundles, &cb.grad_b);

    // composer transpose, then transposed propagation
    let mut g_items = ctx.composer.affiliation_transpose(&g_bundles_i)?;
    if ctx.use_mediated {
        g_items.add_assign(&ctx.composer.mediated_transpose(&g_bundles_i)?);
    }
    let (g_users_b0, g_bundles_b0) = ctx.ub_graph.backpropagate(&g_users_b, &g_bundles_b, ctx.layers)?;
    let (g_users_i0, g_items0) = ctx.ui_graph.backpropagate(&g_users_i, &g_items, ctx.layers)?;

    let mut gradients = ParameterSet {
        users_bundle_level: g_users_b0,
        bundles_bundle_level: g_bundles_b0,
        items_item_level: g_items0,
        users_item_level: None,
    };
    if params.shares_user_embedding() {
        gradients.users_bundle_level.add_assign(&g_users_i0);
    } else {
        gradients.users_item_level = Some(g_users_i0);
    }
    debug_assert_eq!(gradients.num_items(), n);

    let l2 = params.squared_norm();
    for (g, p) in gradients.tables_mut().into_iter().zip(params.tables()) {
        axpy(2.0 * hyper.lambda2, p.as_slice(), g.as_mut_slice());
    }

    let breakdown = LossBreakdown::combine(bpr, cu.loss, cb.loss, l2, hyper);
    if let Some(component) = breakdown.first_non_finite() {
        return Err(EbrecError::non_finite(format!("loss term {component}")));
    }
    let names = gradients.table_names();
    for (name, g) in names.iter().zip(gradients.tables()) {
        if !g.is_finite() {
            return Err(EbrecError::non_finite(format!("gradient of {name}")));
        }
    }
    Ok(LossOutput {
        breakdown,
        gradients,
        floored_rows: cu.floored_rows + cb.floored_rows,
    })
}
