use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::predictor::UiPredictor;
use crate::dataset::{group_by_left, InteractionDataset};
use crate::error::{EbrecError, Result};
use crate::eval::top_k;

/// Values of `k_aug` explored by the standard sweep.
pub const STANDARD_K_AUG: [usize; 7] = [0, 5, 10, 20, 30, 40, 50];

pub const AUGMENTED_FILE: &str = "augmented_user_item.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Provenance {
    Observed,
    Generated,
}

impl Provenance {
    fn flag(self) -> char {
        match self {
            Provenance::Observed => 'O',
            Provenance::Generated => 'G',
        }
    }
}

/// Per-user item sets: observed interactions plus generated pseudo-items.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AugmentedNeighbors {
    num_items: usize,
    k_aug: usize,
    observed: Vec<Vec<usize>>,
    generated: Vec<Vec<usize>>,
}

impl AugmentedNeighbors {
    /// No generated items; equivalent to `k_aug = 0`.
    pub fn observed_only(ds: &InteractionDataset) -> Self {
        let observed = group_by_left(&ds.ui_pairs, ds.num_users);
        AugmentedNeighbors {
            num_items: ds.num_items,
            k_aug: 0,
            generated: vec![Vec::new(); observed.len()],
            observed,
        }
    }

    pub fn k_aug(&self) -> usize {
        self.k_aug
    }

    pub fn num_users(&self) -> usize {
        self.observed.len()
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn observed(&self, user: usize) -> &[usize] {
        &self.observed[user]
    }

    pub fn generated(&self, user: usize) -> &[usize] {
        &self.generated[user]
    }

    pub fn generated_count(&self) -> usize {
        self.generated.iter().map(Vec::len).sum()
    }

    /// `N_u^I(O) ∪ T_u`, sorted, with provenance.
    pub fn entries(&self, user: usize) -> Vec<(usize, Provenance)> {
        let mut out: Vec<(usize, Provenance)> = self.observed[user]
            .iter()
            .map(|&i| (i, Provenance::Observed))
            .chain(self.generated[user].iter().map(|&i| (i, Provenance::Generated)))
            .collect();
        out.sort_unstable_by_key(|e| e.0);
        out
    }

    /// Sorted union per user.
    pub fn user_items(&self) -> Vec<Vec<usize>> {
        (0..self.num_users())
            .map(|u| self.entries(u).into_iter().map(|e| e.0).collect())
            .collect()
    }

    /// Every `(user, item)` pair of the augmented relation.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        (0..self.num_users())
            .flat_map(|u| self.entries(u).into_iter().map(move |e| (u, e.0)))
            .collect()
    }

    /// Errors unless the observed lists equal the dataset's user-item relation.
    pub fn check_observed(&self, ds: &InteractionDataset) -> Result<()> {
        if self.num_items != ds.num_items || self.observed != group_by_left(&ds.ui_pairs, ds.num_users) {
            return Err(EbrecError::contract(
                "augmented neighbors were produced from a different user-item relation",
            ));
        }
        Ok(())
    }
}

/// Adds each user's `k_aug` best-scoring unobserved items (ties by ascending id).
pub fn generate_topk(
    predictor: &dyn UiPredictor,
    ds: &InteractionDataset,
    k_aug: usize,
) -> Result<AugmentedNeighbors> {
    if predictor.num_users() != ds.num_users || predictor.num_items() != ds.num_items {
        return Err(EbrecError::contract(format!(
            "predictor covers {}x{}, dataset has {} users x {} items",
            predictor.num_users(),
            predictor.num_items(),
            ds.num_users,
            ds.num_items
        )));
    }
    if !STANDARD_K_AUG.contains(&k_aug) {
        log::warn!("k_aug = {k_aug} is outside the standard sweep {STANDARD_K_AUG:?}");
    }
    let mut aug = AugmentedNeighbors::observed_only(ds);
    aug.k_aug = k_aug;
    if k_aug == 0 {
        return Ok(aug);
    }
    let observed = &aug.observed;
    aug.generated = (0..ds.num_users)
        .into_par_iter()
        .map(|u| {
            let scores = predictor.score_items(u);
            let mut picked = top_k(&scores, &observed[u], k_aug);
            picked.sort_unstable();
            picked
        })
        .collect();
    Ok(aug)
}

/// Header fields written as the first comment line of the augmentation file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AugmentHeader {
    pub fields: BTreeMap<String, String>,
}

impl AugmentHeader {
    pub fn new(pairs: &[(&str, String)]) -> Self {
        AugmentHeader {
            fields: pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields.get(key).map(String::as_str)
    }

    fn render(&self) -> String {
        let body: Vec<String> = self.fields.iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("# {}", body.join(" "))
    }

    fn parse(line: &str) -> Self {
        let fields = line
            .trim_start_matches('#')
            .split_whitespace()
            .filter_map(|kv| kv.split_once('='))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        AugmentHeader { fields }
    }
}

/// Writes `u<TAB>i<TAB>flag` lines, sorted by user then item.
pub fn write_augmented(path: impl AsRef<Path>, aug: &AugmentedNeighbors, header: &AugmentHeader) -> Result<()> {
    let path = path.as_ref();
    let mut header = header.clone();
    header.fields.insert("k_aug".into(), aug.k_aug.to_string());
    let mut out = header.render();
    out.push('\n');
    for u in 0..aug.num_users() {
        for (i, prov) in aug.entries(u) {
            let _ = writeln!(out, "{u}\t{i}\t{}", prov.flag());
        }
    }
    fs::write(path, out).map_err(|e| EbrecError::io(path, e))
}

pub fn read_augmented(
    path: impl AsRef<Path>,
    num_users: usize,
    num_items: usize,
) -> Result<(AugmentedNeighbors, AugmentHeader)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| EbrecError::io(path, e))?;
    let mut header = AugmentHeader::default();
    let mut observed = vec![Vec::new(); num_users];
    let mut generated = vec![Vec::new(); num_users];
    let parse_err = |line: usize, message: String| EbrecError::Parse {
        file: path.to_path_buf(),
        line,
        message,
    };
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.starts_with('#') {
            if idx == 0 {
                header = AugmentHeader::parse(line);
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_err(line_no, format!("expected 3 fields, found {}", fields.len())));
        }
        let u: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad user id `{}`", fields[0])))?;
        let i: usize = fields[1]
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad item id `{}`", fields[1])))?;
        if u >= num_users || i >= num_items {
            return Err(parse_err(line_no, format!("pair ({u}, {i}) out of range")));
        }
        match fields[2] {
            "O" => observed[u].push(i),
            "G" => generated[u].push(i),
            other => return Err(parse_err(line_no, format!("flag `{other}` is not O or G"))),
        }
    }
    for u in 0..num_users {
        observed[u].sort_unstable();
        observed[u].dedup();
        generated[u].sort_unstable();
        generated[u].dedup();
        if let Some(&dup) = generated[u].iter().find(|i| observed[u].binary_search(i).is_ok()) {
            return Err(EbrecError::Parse {
                file: path.to_path_buf(),
                line: 0,
                message: format!("user {u}: item {dup} flagged both O and G"),
            });
        }
    }
    let k_aug = match header.get("k_aug") {
        Some(v) => v.parse().map_err(|_| parse_err(1, format!("bad k_aug `{v}`")))?,
        None => generated.iter().map(Vec::len).max().unwrap_or(0),
    };
    Ok((
        AugmentedNeighbors {
            num_items,
            k_aug,
            observed,
            generated,
        },
        header,
    ))
}
