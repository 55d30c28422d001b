//! Triple-relation interaction data: user-item (X), user-bundle (Y) and
//! bundle-item (Z) pairs, plus the published train/valid/test splits of Y.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{EbrecError, Result};

pub type Pair = (usize, usize);

pub const SIZE_FILE: &str = "data_size.txt";
pub const USER_ITEM_FILE: &str = "user_item.txt";
pub const UB_TRAIN_FILE: &str = "user_bundle_train.txt";
pub const UB_VALID_FILE: &str = "user_bundle_valid.txt";
pub const UB_TEST_FILE: &str = "user_bundle_test.txt";
pub const BUNDLE_ITEM_FILE: &str = "bundle_item.txt";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InteractionDataset {
    pub num_users: usize,
    pub num_items: usize,
    pub num_bundles: usize,
    /// Sorted, deduplicated `(user, item)` pairs.
    pub ui_pairs: Vec<Pair>,
    /// Sorted, deduplicated `(user, bundle)` pairs.
    pub ub_train: Vec<Pair>,
    pub ub_valid: Vec<Pair>,
    pub ub_test: Vec<Pair>,
    /// Sorted, deduplicated `(bundle, item)` pairs.
    pub bi_pairs: Vec<Pair>,
}

/// Bookkeeping from [`load_dataset`]: lines read and duplicates dropped per file.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub lines: BTreeMap<String, usize>,
    pub duplicates_dropped: BTreeMap<String, usize>,
}

impl LoadReport {
    pub fn total_duplicates(&self) -> usize {
        self.duplicates_dropped.values().sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Valid,
    Test,
}

impl InteractionDataset {
    /// Builds a dataset from raw pair lists, sorting and deduplicating each and
    /// checking id ranges and split disjointness.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        num_users: usize,
        num_items: usize,
        num_bundles: usize,
        ui_pairs: Vec<Pair>,
        ub_train: Vec<Pair>,
        ub_valid: Vec<Pair>,
        ub_test: Vec<Pair>,
        bi_pairs: Vec<Pair>,
    ) -> Result<Self> {
        let ds = InteractionDataset {
            num_users,
            num_items,
            num_bundles,
            ui_pairs: sorted_unique(ui_pairs).0,
            ub_train: sorted_unique(ub_train).0,
            ub_valid: sorted_unique(ub_valid).0,
            ub_test: sorted_unique(ub_test).0,
            bi_pairs: sorted_unique(bi_pairs).0,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, pairs: &[Pair], left: usize, right: usize| -> Result<()> {
            if let Some(&(l, r)) = pairs.iter().find(|&&(l, r)| l >= left || r >= right) {
                return Err(EbrecError::contract(format!(
                    "{name}: pair ({l}, {r}) outside {left}x{right}"
                )));
            }
            if pairs.windows(2).any(|w| w[0] >= w[1]) {
                return Err(EbrecError::contract(format!(
                    "{name}: pairs must be sorted and unique"
                )));
            }
            Ok(())
        };
        check("user_item", &self.ui_pairs, self.num_users, self.num_items)?;
        check("ub_train", &self.ub_train, self.num_users, self.num_bundles)?;
        check("ub_valid", &self.ub_valid, self.num_users, self.num_bundles)?;
        check("ub_test", &self.ub_test, self.num_users, self.num_bundles)?;
        check("bundle_item", &self.bi_pairs, self.num_bundles, self.num_items)?;

        let splits = [
            ("ub_train", &self.ub_train),
            ("ub_valid", &self.ub_valid),
            ("ub_test", &self.ub_test),
        ];
        for a in 0..splits.len() {
            for b in a + 1..splits.len() {
                if let Some(p) = first_common(splits[a].1, splits[b].1) {
                    return Err(EbrecError::contract(format!(
                        "splits {} and {} share pair {:?}",
                        splits[a].0, splits[b].0, p
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn split_pairs(&self, split: Split) -> &[Pair] {
        match split {
            Split::Valid => &self.ub_valid,
            Split::Test => &self.ub_test,
        }
    }

    /// Keeps a random `fraction` of users, every bundle and item they touch
    /// through any relation, and re-indexes all ids densely. Bundle-item pairs
    /// are restricted to retained bundles and items.
    pub fn subsample_users(&self, fraction: f64, seed: u64) -> Result<InteractionDataset> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(EbrecError::contract(format!(
                "subsample fraction {fraction} outside (0, 1]"
            )));
        }
        let mut users: Vec<usize> = (0..self.num_users).collect();
        users.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let keep = ((self.num_users as f64 * fraction).ceil() as usize).max(1);
        let mut users = users[..keep.min(self.num_users)].to_vec();
        users.sort_unstable();

        let user_map = remap(self.num_users, users.iter().copied());
        let kept_user = |u: usize| user_map[u].is_some();
        let all_ub = self
            .ub_train
            .iter()
            .chain(&self.ub_valid)
            .chain(&self.ub_test);
        let bundle_map = remap(
            self.num_bundles,
            all_ub.filter(|p| kept_user(p.0)).map(|p| p.1),
        );
        let item_map = remap(
            self.num_items,
            self.ui_pairs
                .iter()
                .filter(|p| kept_user(p.0))
                .map(|p| p.1)
                .chain(
                    self.bi_pairs
                        .iter()
                        .filter(|p| bundle_map[p.0].is_some())
                        .map(|p| p.1),
                ),
        );
        let project = |pairs: &[Pair], lm: &[Option<usize>], rm: &[Option<usize>]| -> Vec<Pair> {
            pairs
                .iter()
                .filter_map(|&(l, r)| Some((lm[l]?, rm[r]?)))
                .collect()
        };
        InteractionDataset::new(
            users.len(),
            count_mapped(&item_map),
            count_mapped(&bundle_map),
            project(&self.ui_pairs, &user_map, &item_map),
            project(&self.ub_train, &user_map, &bundle_map),
            project(&self.ub_valid, &user_map, &bundle_map),
            project(&self.ub_test, &user_map, &bundle_map),
            project(&self.bi_pairs, &bundle_map, &item_map),
        )
    }
}

fn remap(n: usize, ids: impl Iterator<Item = usize>) -> Vec<Option<usize>> {
    let mut present = vec![false; n];
    for id in ids {
        present[id] = true;
    }
    let mut next = 0;
    present
        .into_iter()
        .map(|p| {
            p.then(|| {
                next += 1;
                next - 1
            })
        })
        .collect()
}

fn count_mapped(map: &[Option<usize>]) -> usize {
    map.iter().filter(|m| m.is_some()).count()
}

fn sorted_unique(mut pairs: Vec<Pair>) -> (Vec<Pair>, usize) {
    let before = pairs.len();
    pairs.sort_unstable();
    pairs.dedup();
    let dropped = before - pairs.len();
    (pairs, dropped)
}

fn first_common(a: &[Pair], b: &[Pair]) -> Option<Pair> {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => return Some(a[i]),
        }
    }
    None
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| EbrecError::io(path, e))
}

fn parse_ids(path: &Path, line_no: usize, line: &str, expected: usize) -> Result<Vec<usize>> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != expected {
        return Err(EbrecError::Parse {
            file: path.to_path_buf(),
            line: line_no,
            message: format!("expected {expected} integer fields, found {}", fields.len()),
        });
    }
    fields
        .iter()
        .map(|f| {
            f.parse::<usize>().map_err(|_| EbrecError::Parse {
                file: path.to_path_buf(),
                line: line_no,
                message: format!("`{f}` is not a non-negative integer"),
            })
        })
        .collect()
}

fn read_pairs(
    dir: &Path,
    name: &str,
    left: usize,
    right: usize,
    report: &mut LoadReport,
) -> Result<Vec<Pair>> {
    let path = dir.join(name);
    let text = read_text(&path)?;
    let mut pairs = Vec::new();
    let mut lines = 0;
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        lines += 1;
        let ids = parse_ids(&path, idx + 1, line, 2)?;
        let (l, r) = (ids[0], ids[1]);
        if l >= left || r >= right {
            return Err(EbrecError::Parse {
                file: path.clone(),
                line: idx + 1,
                message: format!("pair ({l}, {r}) out of declared range {left}x{right}"),
            });
        }
        pairs.push((l, r));
    }
    let (pairs, dropped) = sorted_unique(pairs);
    if dropped > 0 {
        log::warn!("{}: dropped {dropped} duplicate lines", path.display());
    }
    report.lines.insert(name.to_string(), lines);
    report.duplicates_dropped.insert(name.to_string(), dropped);
    Ok(pairs)
}

/// Reads the six-file dataset directory. Entity counts come from the size file.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(InteractionDataset, LoadReport)> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(EbrecError::MissingFile(dir.to_path_buf()));
    }
    let size_path = dir.join(SIZE_FILE);
    let size_text = read_text(&size_path)?;
    let (line_no, size_line) = size_text
        .lines()
        .enumerate()
        .find(|(_, l)| !l.trim().is_empty())
        .ok_or_else(|| EbrecError::Parse {
            file: size_path.clone(),
            line: 1,
            message: "empty size file".into(),
        })?;
    let sizes = parse_ids(&size_path, line_no + 1, size_line, 3)?;
    let (m, o, n) = (sizes[0], sizes[1], sizes[2]);

    let mut report = LoadReport::default();
    let ui = read_pairs(dir, USER_ITEM_FILE, m, n, &mut report)?;
    let train = read_pairs(dir, UB_TRAIN_FILE, m, o, &mut report)?;
    let valid = read_pairs(dir, UB_VALID_FILE, m, o, &mut report)?;
    let test = read_pairs(dir, UB_TEST_FILE, m, o, &mut report)?;
    let bi = read_pairs(dir, BUNDLE_ITEM_FILE, o, n, &mut report)?;
    let ds = InteractionDataset::new(m, n, o, ui, train, valid, test, bi)?;
    Ok((ds, report))
}

fn write_pairs(path: &Path, pairs: &[Pair]) -> Result<()> {
    let mut out = String::with_capacity(pairs.len() * 12);
    for &(l, r) in pairs {
        let _ = writeln!(out, "{l}\t{r}");
    }
    fs::write(path, out).map_err(|e| EbrecError::io(path, e))
}

/// Writes `ds` in the directory layout read by [`load_dataset`].
pub fn write_dataset(ds: &InteractionDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| EbrecError::io(dir, e))?;
    let size_path: PathBuf = dir.join(SIZE_FILE);
    fs::write(
        &size_path,
        format!("{}\t{}\t{}\n", ds.num_users, ds.num_bundles, ds.num_items),
    )
    .map_err(|e| EbrecError::io(&size_path, e))?;
    write_pairs(&dir.join(USER_ITEM_FILE), &ds.ui_pairs)?;
    write_pairs(&dir.join(UB_TRAIN_FILE), &ds.ub_train)?;
    write_pairs(&dir.join(UB_VALID_FILE), &ds.ub_valid)?;
    write_pairs(&dir.join(UB_TEST_FILE), &ds.ub_test)?;
    write_pairs(&dir.join(BUNDLE_ITEM_FILE), &ds.bi_pairs)?;
    Ok(())
}

/// Per-entity adjacency lists, each sorted ascending without duplicates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborSets {
    /// Users with a training interaction on each bundle.
    pub bundle_users: Vec<Vec<usize>>,
    /// Training bundles of each user.
    pub user_bundles: Vec<Vec<usize>>,
    /// Observed items of each user.
    pub user_items: Vec<Vec<usize>>,
    /// Items contained in each bundle.
    pub bundle_items: Vec<Vec<usize>>,
}

/// Groups sorted `(left, right)` pairs by left id.
pub fn group_by_left(pairs: &[Pair], left_count: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); left_count];
    for &(l, r) in pairs {
        out[l].push(r);
    }
    for list in &mut out {
        list.sort_unstable();
        list.dedup();
    }
    out
}

/// Groups pairs by right id, listing left ids.
pub fn group_by_right(pairs: &[Pair], right_count: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); right_count];
    for &(l, r) in pairs {
        out[r].push(l);
    }
    for list in &mut out {
        list.sort_unstable();
        list.dedup();
    }
    out
}

pub fn neighbor_sets(ds: &InteractionDataset) -> NeighborSets {
    NeighborSets {
        bundle_users: group_by_right(&ds.ub_train, ds.num_bundles),
        user_bundles: group_by_left(&ds.ub_train, ds.num_users),
        user_items: group_by_left(&ds.ui_pairs, ds.num_users),
        bundle_items: group_by_left(&ds.bi_pairs, ds.num_bundles),
    }
}

/// Set of pairs for O(1) membership tests.
pub fn pair_set(pairs: &[Pair]) -> HashSet<Pair> {
    pairs.iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny() -> InteractionDataset {
        InteractionDataset::new(
            2,
            6,
            2,
            vec![(0, 2), (0, 5), (1, 2)],
            vec![(0, 1)],
            vec![(1, 0)],
            vec![],
            vec![(0, 0), (1, 2)],
        )
        .unwrap()
    }

    #[test]
    fn neighbor_sets_single_edge() {
        let ns = neighbor_sets(&tiny());
        assert_eq!(ns.bundle_users[1], vec![0]);
        assert!(ns.bundle_users[0].is_empty());
        assert_eq!(ns.user_items[0], vec![2, 5]);
        assert_eq!(ns.user_items[1], vec![2]);
    }

    #[test]
    fn neighbor_sets_match_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pairs: Vec<Pair> = (0..50)
            .map(|_| (rng.random_range(0..7), rng.random_range(0..9)))
            .collect();
        let ds = InteractionDataset::new(7, 9, 1, pairs.clone(), vec![], vec![], vec![], vec![])
            .unwrap();
        let ns = neighbor_sets(&ds);
        for u in 0..7 {
            let brute: Vec<usize> = (0..9).filter(|&i| pairs.contains(&(u, i))).collect();
            assert_eq!(ns.user_items[u], brute);
        }
        assert_eq!(ns, neighbor_sets(&ds));
    }

    #[test]
    fn overlapping_splits_are_rejected() {
        let err = InteractionDataset::new(1, 1, 1, vec![], vec![(0, 0)], vec![(0, 0)], vec![], vec![]);
        assert!(matches!(err, Err(EbrecError::Contract(_))));
    }

    #[test]
    fn out_of_range_pair_is_rejected() {
        let err = InteractionDataset::new(1, 1, 1, vec![(0, 1)], vec![], vec![], vec![], vec![]);
        assert!(err.is_err());
    }

    #[test]
    fn subsample_keeps_consistent_ranges() {
        let ds = tiny();
        let sub = ds.subsample_users(0.5, 3).unwrap();
        assert_eq!(sub.num_users, 1);
        sub.validate().unwrap();
        let full = ds.subsample_users(1.0, 3).unwrap();
        assert_eq!(full.ui_pairs.len(), ds.ui_pairs.len());
    }
}
