//! Full-ranking evaluation with Recall@K and NDCG@K.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{group_by_left, InteractionDataset, Split};
use crate::error::{EbrecError, Result};
use crate::model::ViewEmbeddings;

/// `|top-k ∩ relevant| / |relevant|`; zero when `relevant` is empty.
pub fn recall_at_k(ranked: &[usize], relevant: &[usize], k: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let hits = ranked
        .iter()
        .take(k)
        .filter(|b| relevant.contains(b))
        .count();
    hits as f64 / relevant.len() as f64
}

/// Binary-gain NDCG with discount `1 / log2(pos + 1)` at 1-based positions.
pub fn ndcg_at_k(ranked: &[usize], relevant: &[usize], k: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, b)| relevant.contains(b))
        .map(|(pos, _)| 1.0 / ((pos + 2) as f64).log2())
        .sum();
    let ideal: f64 = (0..relevant.len().min(k))
        .map(|pos| 1.0 / ((pos + 2) as f64).log2())
        .sum();
    dcg / ideal
}

/// Orders candidates by descending score, ties by ascending id.
#[inline]
pub fn rank_order(scores: &[f64], a: usize, b: usize) -> Ordering {
    scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
}

/// The `k` best unmasked candidates, best first.
pub fn top_k(scores: &[f64], masked: &[usize], k: usize) -> Vec<usize> {
    let mut candidates: Vec<usize> = (0..scores.len())
        .filter(|b| masked.binary_search(b).is_err())
        .collect();
    let k = k.min(candidates.len());
    if k == 0 {
        return Vec::new();
    }
    if k < candidates.len() {
        candidates.select_nth_unstable_by(k - 1, |&a, &b| rank_order(scores, a, b));
        candidates.truncate(k);
    }
    candidates.sort_unstable_by(|&a, &b| rank_order(scores, a, b));
    candidates
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Recall,
    Ndcg,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Recall => "recall",
            Metric::Ndcg => "ndcg",
        }
    }
}

/// Per-user rankings and aggregate metrics for one split.
#[derive(Clone, Debug, PartialEq)]
pub struct RankingResult {
    /// Evaluated users: those with at least one relevant bundle in the split.
    pub users: Vec<usize>,
    /// Top-`max(cutoffs)` bundles per evaluated user.
    pub ranked: Vec<Vec<usize>>,
    pub relevant: Vec<Vec<usize>>,
    pub cutoffs: Vec<usize>,
    /// Mean over evaluated users, keyed by `(metric, cutoff)`.
    pub aggregate: BTreeMap<(Metric, usize), f64>,
}

impl RankingResult {
    pub fn get(&self, metric: Metric, k: usize) -> Option<f64> {
        self.aggregate.get(&(metric, k)).copied()
    }

    pub fn per_user(&self, metric: Metric, k: usize) -> Vec<f64> {
        self.ranked
            .iter()
            .zip(&self.relevant)
            .map(|(r, rel)| match metric {
                Metric::Recall => recall_at_k(r, rel, k),
                Metric::Ndcg => ndcg_at_k(r, rel, k),
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalOptions {
    /// Also mask validation positives when ranking the test split.
    pub mask_valid_at_test: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            mask_valid_at_test: true,
        }
    }
}

/// Ranks every bundle for each user with a relevant bundle in `split`.
/// Training positives are always masked; validation positives too when
/// evaluating the test split with `mask_valid_at_test`.
pub fn rank_all(
    views: &ViewEmbeddings,
    ds: &InteractionDataset,
    split: Split,
    cutoffs: &[usize],
    opts: EvalOptions,
) -> Result<RankingResult> {
    if cutoffs.is_empty() || cutoffs.contains(&0) {
        return Err(EbrecError::contract("cutoffs must be non-empty and positive"));
    }
    if views.num_users() != ds.num_users || views.num_bundles() != ds.num_bundles {
        return Err(EbrecError::contract(format!(
            "views cover {} users / {} bundles, dataset has {} / {}",
            views.num_users(),
            views.num_bundles(),
            ds.num_users,
            ds.num_bundles
        )));
    }
    let max_k = *cutoffs.iter().max().expect("non-empty");
    let relevant_by_user = group_by_left(ds.split_pairs(split), ds.num_users);
    let mut masked_by_user = group_by_left(&ds.ub_train, ds.num_users);
    if split == Split::Test && opts.mask_valid_at_test {
        for (u, extra) in group_by_left(&ds.ub_valid, ds.num_users).into_iter().enumerate() {
            if !extra.is_empty() {
                masked_by_user[u].extend(extra);
                masked_by_user[u].sort_unstable();
            }
        }
    }
    let users: Vec<usize> = (0..ds.num_users)
        .filter(|&u| !relevant_by_user[u].is_empty())
        .collect();
    let ranked: Vec<Vec<usize>> = users
        .par_iter()
        .map(|&u| {
            let scores: Vec<f64> = (0..views.num_bundles())
                .map(|b| views.score_unchecked(u, b))
                .collect();
            top_k(&scores, &masked_by_user[u], max_k)
        })
        .collect();
    let relevant: Vec<Vec<usize>> = users.iter().map(|&u| relevant_by_user[u].clone()).collect();

    let mut result = RankingResult {
        users,
        ranked,
        relevant,
        cutoffs: cutoffs.to_vec(),
        aggregate: BTreeMap::new(),
    };
    for &k in cutoffs {
        for metric in [Metric::Recall, Metric::Ndcg] {
            let vals = result.per_user(metric, k);
            let mean = if vals.is_empty() {
                0.0
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            };
            result.aggregate.insert((metric, k), mean);
        }
    }
    Ok(result)
}

/// Cutoffs 5, 10, …, 100 for NDCG curves.
pub fn curve_cutoffs() -> Vec<usize> {
    (1..=20).map(|k| 5 * k).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_single() {
        assert_eq!(recall_at_k(&[4, 1, 2], &[4], 20), 1.0);
        assert_eq!(ndcg_at_k(&[4, 1, 2], &[4], 20), 1.0);
    }

    #[test]
    fn rank_two_hit() {
        assert_eq!(recall_at_k(&[0, 7], &[7], 2), 1.0);
        let n = ndcg_at_k(&[0, 7], &[7], 2);
        assert!((n - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert!((n - 0.6309).abs() < 1e-4);
    }

    #[test]
    fn recall_examples() {
        assert_eq!(recall_at_k(&[1, 3], &[1], 2), 1.0);
        assert_eq!(recall_at_k(&[1, 3], &[1, 2], 2), 0.5);
    }

    #[test]
    fn ndcg_rank_three() {
        assert!((ndcg_at_k(&[5, 6, 9], &[9], 3) - 0.5).abs() < 1e-15);
        assert_eq!(ndcg_at_k(&[9, 5, 6], &[9, 5], 3), 1.0);
    }

    #[test]
    fn top_k_masks_and_breaks_ties_by_id() {
        let scores = [1.0, 3.0, 3.0, 2.0, 3.0];
        assert_eq!(top_k(&scores, &[2], 3), vec![1, 4, 3]);
        assert_eq!(top_k(&scores, &[], 10), vec![1, 2, 4, 3, 0]);
        assert!(top_k(&scores, &[0, 1, 2, 3, 4], 3).is_empty());
    }

    #[test]
    fn curve_has_twenty_points() {
        let c = curve_cutoffs();
        assert_eq!(c.len(), 20);
        assert_eq!((c[0], c[19]), (5, 100));
    }
}
