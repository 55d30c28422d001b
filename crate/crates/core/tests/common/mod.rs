//! Random instances and reference implementations shared by the test targets.
//! Every oracle here is written against dense or brute-force formulations and
//! does not call the code under test beyond constructing inputs.

#![allow(dead_code)]

use std::collections::BTreeSet;

use ebrec::augmentor::{generate_topk, AugmentedNeighbors, FactorPredictor, PredictorKind};
use ebrec::dataset::{InteractionDataset, Pair};
use ebrec::matrix::Matrix;
use ebrec::model::ParameterSet;
use ebrec::objective::{Batch, Triplet};
use ebrec::trainer::{Ablation, ModelInputs, TrainConfig};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Matrix {
    let data = (0..rows * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, dim, data).unwrap()
}

/// Each pair present independently with probability `density`.
pub fn random_pairs(rng: &mut ChaCha8Rng, left: usize, right: usize, density: f64) -> Vec<Pair> {
    let mut out = Vec::new();
    for l in 0..left {
        for r in 0..right {
            if rng.random::<f64>() < density {
                out.push((l, r));
            }
        }
    }
    out
}

pub fn dense(rows: usize, cols: usize) -> Vec<Vec<f64>> {
    vec![vec![0.0; cols]; rows]
}

pub fn to_dense(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

pub fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let cols = b.first().map_or(0, Vec::len);
    let mut out = dense(a.len(), cols);
    for i in 0..a.len() {
        for (k, bk) in b.iter().enumerate() {
            let aik = a[i][k];
            if aik != 0.0 {
                for j in 0..cols {
                    out[i][j] += aik * bk[j];
                }
            }
        }
    }
    out
}

pub fn max_abs_diff_dense(a: &Matrix, b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.rows(), b.len());
    let mut worst: f64 = 0.0;
    for (r, row) in b.iter().enumerate() {
        for (x, y) in a.row(r).iter().zip(row) {
            worst = worst.max((x - y).abs());
        }
    }
    worst
}

/// Symmetric normalized adjacency of the bipartite graph, entities ordered
/// left then right.
pub fn normalized_adjacency(pairs: &[Pair], left: usize, right: usize) -> Vec<Vec<f64>> {
    let n = left + right;
    let mut adj = dense(n, n);
    for &(l, r) in pairs {
        adj[l][left + r] = 1.0;
        adj[left + r][l] = 1.0;
    }
    let deg: Vec<f64> = adj.iter().map(|row| row.iter().sum()).collect();
    for i in 0..n {
        for j in 0..n {
            if adj[i][j] != 0.0 {
                adj[i][j] /= deg[i].sqrt() * deg[j].sqrt();
            }
        }
    }
    adj
}

/// `sum_{k=0..L} Â^k E` with the dense adjacency.
pub fn dense_propagation(
    pairs: &[Pair],
    left: usize,
    right: usize,
    left0: &Matrix,
    right0: &Matrix,
    layers: usize,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let adj = normalized_adjacency(pairs, left, right);
    let mut layer: Vec<Vec<f64>> = to_dense(left0).into_iter().chain(to_dense(right0)).collect();
    let mut fused = layer.clone();
    for _ in 0..layers {
        layer = matmul(&adj, &layer);
        for (f, l) in fused.iter_mut().zip(&layer) {
            for (a, b) in f.iter_mut().zip(l) {
                *a += b;
            }
        }
    }
    let right_part = fused.split_off(left);
    (fused, right_part)
}

/// Row-normalized incidence matrix: row `o` averages over `lists[o]`.
pub fn mean_operator(lists: &[Vec<usize>], cols: usize) -> Vec<Vec<f64>> {
    let mut out = dense(lists.len(), cols);
    for (o, list) in lists.iter().enumerate() {
        let set: BTreeSet<usize> = list.iter().copied().collect();
        for &c in &set {
            out[o][c] = 1.0 / set.len() as f64;
        }
    }
    out
}

/// Per-bundle loop form of the affiliation pathway.
pub fn loop_affiliation(bundle_items: &[Vec<usize>], items: &Matrix) -> Vec<Vec<f64>> {
    bundle_items
        .iter()
        .map(|list| {
            let mut acc = vec![0.0; items.dim()];
            for &i in list {
                for (a, v) in acc.iter_mut().zip(items.row(i)) {
                    *a += v;
                }
            }
            if !list.is_empty() {
                acc.iter_mut().for_each(|a| *a /= list.len() as f64);
            }
            acc
        })
        .collect()
}

/// Per-bundle loop form of the mediated pathway.
pub fn loop_mediated(
    bundle_users: &[Vec<usize>],
    user_items: &[Vec<usize>],
    items: &Matrix,
) -> Vec<Vec<f64>> {
    let user_means = loop_affiliation(user_items, items);
    bundle_users
        .iter()
        .map(|users| {
            let mut acc = vec![0.0; items.dim()];
            for &u in users {
                for (a, v) in acc.iter_mut().zip(&user_means[u]) {
                    *a += v;
                }
            }
            if !users.is_empty() {
                acc.iter_mut().for_each(|a| *a /= users.len() as f64);
            }
            acc
        })
        .collect()
}

pub fn lists_by_left(pairs: &[Pair], left: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); left];
    for &(l, r) in pairs {
        out[l].push(r);
    }
    out
}

pub fn lists_by_right(pairs: &[Pair], right: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); right];
    for &(l, r) in pairs {
        out[r].push(l);
    }
    out
}

/// Literal Recall@K: hits in the first K over the number of relevant bundles.
pub fn literal_recall(ranked: &[usize], relevant: &[usize], k: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let hits = ranked.iter().take(k).filter(|b| relevant.contains(b)).count();
    hits as f64 / relevant.len() as f64
}

/// Literal NDCG@K with binary gains and `1 / log2(position + 1)` discounts.
pub fn literal_ndcg(ranked: &[usize], relevant: &[usize], k: usize) -> f64 {
    let mut dcg = 0.0;
    for (idx, b) in ranked.iter().take(k).enumerate() {
        if relevant.contains(b) {
            dcg += 1.0 / ((idx + 2) as f64).log2();
        }
    }
    let ideal_hits = relevant.len().min(k);
    let mut idcg = 0.0;
    for idx in 0..ideal_hits {
        idcg += 1.0 / ((idx + 2) as f64).log2();
    }
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// Full stable sort by descending score, ascending id; masked ids removed.
pub fn full_sort_ranking(scores: &[f64], masked: &[usize]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..scores.len()).filter(|i| !masked.contains(i)).collect();
    ids.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    ids
}

/// A small dataset where every user has at least one training bundle with a
/// sampleable negative, and every bundle has at least one item.
pub fn random_dataset(rng: &mut ChaCha8Rng, m: usize, n: usize, o: usize) -> InteractionDataset {
    assert!(o >= 2);
    let ui = random_pairs(rng, m, n, 0.35);
    let mut bi = random_pairs(rng, o, n, 0.3);
    for b in 0..o {
        bi.push((b, rng.random_range(0..n)));
    }
    let mut train = Vec::new();
    let mut valid = Vec::new();
    let mut test = Vec::new();
    for u in 0..m {
        let mut bundles: Vec<usize> = (0..o).collect();
        bundles.shuffle(rng);
        let take = rng.random_range(1..o);
        for (k, &b) in bundles[..take].iter().enumerate() {
            match (k, rng.random_range(0..4)) {
                (0, _) => train.push((u, b)),
                (_, 0) => valid.push((u, b)),
                (_, 1) => test.push((u, b)),
                _ => train.push((u, b)),
            }
        }
    }
    InteractionDataset::new(m, n, o, ui, train, valid, test, bi).unwrap()
}

pub fn random_predictor(rng: &mut ChaCha8Rng, m: usize, n: usize, dim: usize) -> FactorPredictor {
    FactorPredictor {
        kind: PredictorKind::MfBpr,
        users: random_matrix(rng, m, dim),
        items: random_matrix(rng, n, dim),
    }
}

pub fn augmented(rng: &mut ChaCha8Rng, ds: &InteractionDataset, k_aug: usize) -> AugmentedNeighbors {
    let p = random_predictor(rng, ds.num_users, ds.num_items, 3);
    generate_topk(&p, ds, k_aug).unwrap()
}

/// One triplet per training pair with a uniformly drawn unobserved negative.
pub fn random_batch(rng: &mut ChaCha8Rng, ds: &InteractionDataset) -> Batch {
    let by_user = lists_by_left(&ds.ub_train, ds.num_users);
    let triplets = ds
        .ub_train
        .iter()
        .filter_map(|&(u, b)| {
            let free: Vec<usize> = (0..ds.num_bundles).filter(|x| !by_user[u].contains(x)).collect();
            let &neg = free.choose(rng)?;
            Some(Triplet {
                user: u,
                positive: b,
                negative: neg,
            })
        })
        .collect();
    Batch::new(triplets)
}

pub struct GradientInstance {
    pub ds: InteractionDataset,
    pub inputs: ModelInputs,
    pub params: ParameterSet,
    pub batch: Batch,
    pub cfg: TrainConfig,
}

/// A toy training instance with dropout already applied to both graphs.
pub fn gradient_instance(seed: u64, k_aug: usize, dropout: f64, shared: bool) -> GradientInstance {
    let mut r = rng(seed);
    let m = r.random_range(3..=8);
    let n = r.random_range(3..=8);
    let o = r.random_range(3..=8);
    let dim = r.random_range(2..=4);
    let ds = random_dataset(&mut r, m, n, o);
    let aug = augmented(&mut r, &ds, k_aug);
    let cfg = TrainConfig {
        dim,
        layers: 2,
        lambda1: 0.1,
        lambda2: 1e-4,
        tau: 0.25,
        k_aug,
        ablation: Ablation::Full,
        shared_user_embedding: shared,
        ..TrainConfig::default()
    };
    let mut inputs = ModelInputs::new(&ds, &aug, &cfg).unwrap();
    inputs.ub_graph = inputs.ub_graph.edge_dropout(dropout, seed ^ 1).unwrap();
    inputs.ui_graph = inputs.ui_graph.edge_dropout(dropout, seed ^ 2).unwrap();
    let mut params = ParameterSet::init(m, n, o, dim, shared, seed).unwrap();
    // Larger entries than Xavier so every loss term is well away from zero.
    for t in params.tables_mut() {
        let noise = random_matrix(&mut r, t.rows(), t.dim());
        t.add_assign(&noise);
    }
    let batch = random_batch(&mut r, &ds);
    GradientInstance {
        ds,
        inputs,
        params,
        batch,
        cfg,
    }
}

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Worst relative error between analytic gradients and central differences.
pub fn gradient_check(inst: &GradientInstance, step: f64) -> (f64, usize) {
    use ebrec::objective::{loss_and_gradients, total_loss};
    let hyper = inst.cfg.hyper();
    let ctx = inst.inputs.context();
    let out = loss_and_gradients(&inst.params, &inst.batch, &hyper, &ctx).unwrap();
    let analytic: Vec<Vec<f64>> = out.gradients.tables().iter().map(|t| t.as_slice().to_vec()).collect();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let table_count = inst.params.tables().len();
    for t in 0..table_count {
        let len = inst.params.tables()[t].as_slice().len();
        for c in 0..len {
            let mut plus = inst.params.clone();
            plus.tables_mut()[t].as_mut_slice()[c] += step;
            let mut minus = inst.params.clone();
            minus.tables_mut()[t].as_mut_slice()[c] -= step;
            let fp = total_loss(&plus, &inst.batch, &hyper, &ctx).unwrap().total;
            let fm = total_loss(&minus, &inst.batch, &hyper, &ctx).unwrap().total;
            let numeric = (fp - fm) / (2.0 * step);
            worst = worst.max(relative_error(analytic[t][c], numeric));
            checked += 1;
        }
    }
    (worst, checked)
}

/// InfoNCE by its literal definition, anchors from `a`, pool from `b`.
pub fn literal_infonce(a: &Matrix, b: &Matrix, tau: f64) -> f64 {
    let unit = |m: &Matrix, r: usize| -> Vec<f64> {
        let n = m.row(r).iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        m.row(r).iter().map(|v| v / n).collect()
    };
    let n = a.rows();
    let mut total = 0.0;
    for j in 0..n {
        let aj = unit(a, j);
        let sims: Vec<f64> = (0..n)
            .map(|k| aj.iter().zip(unit(b, k)).map(|(x, y)| x * y).sum::<f64>() / tau)
            .collect();
        let denom: f64 = sims.iter().map(|s| s.exp()).sum();
        total += -(sims[j].exp() / denom).ln();
    }
    total / n as f64
}
