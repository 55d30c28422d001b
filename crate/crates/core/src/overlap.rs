//! How much of a bundle's item list is reachable through its users' items.

use serde::Serialize;

use crate::dataset::{group_by_left, group_by_right, InteractionDataset};

pub const BINS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OverlapReport {
    /// `ratios[b]` is `None` for bundles without items.
    pub ratios: Vec<Option<f64>>,
    /// Bin `k` holds ratios in `[k/10, (k+1)/10)`; the last bin also holds 1.0.
    pub histogram: [usize; BINS],
    pub empty_bundles: usize,
    pub mean_ratio: Option<f64>,
}

/// Fraction of each bundle's items that at least one of its training users
/// interacted with.
pub fn overlap_ratios(
    bundle_items: &[Vec<usize>],
    bundle_users: &[Vec<usize>],
    user_items: &[Vec<usize>],
    num_items: usize,
) -> Vec<Option<f64>> {
    let mut reached = vec![false; num_items];
    bundle_items
        .iter()
        .zip(bundle_users)
        .map(|(items, users)| {
            if items.is_empty() {
                return None;
            }
            for &u in users {
                for &i in &user_items[u] {
                    reached[i] = true;
                }
            }
            let hit = items.iter().filter(|&&i| reached[i]).count();
            for &u in users {
                for &i in &user_items[u] {
                    reached[i] = false;
                }
            }
            Some(hit as f64 / items.len() as f64)
        })
        .collect()
}

pub fn bin_of(ratio: f64) -> usize {
    ((ratio * BINS as f64).floor() as usize).min(BINS - 1)
}

pub fn overlap_report(ds: &InteractionDataset) -> OverlapReport {
    let ratios = overlap_ratios(
        &group_by_left(&ds.bi_pairs, ds.num_bundles),
        &group_by_right(&ds.ub_train, ds.num_bundles),
        &group_by_left(&ds.ui_pairs, ds.num_users),
        ds.num_items,
    );
    let mut histogram = [0; BINS];
    let mut empty_bundles = 0;
    let mut sum = 0.0;
    for r in &ratios {
        match r {
            Some(r) => {
                histogram[bin_of(*r)] += 1;
                sum += r;
            }
            None => empty_bundles += 1,
        }
    }
    let counted = ratios.len() - empty_bundles;
    OverlapReport {
        ratios,
        histogram,
        empty_bundles,
        mean_ratio: (counted > 0).then(|| sum / counted as f64),
    }
}
