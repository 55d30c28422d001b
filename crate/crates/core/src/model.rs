//! Learnable tables, the two-view forward pass and user-bundle scoring.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::composer::ComposerInputs;
use crate::error::{EbrecError, Result};
use crate::graph::BipartiteGraph;
use crate::matrix::{dot, Matrix};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EBR1";
const FLAG_SHARED_USER: u64 = 1;

/// Layer-0 embedding tables.
///
/// `users_item_level` is `None` when the item-level view reuses the
/// bundle-level user table.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet {
    pub users_bundle_level: Matrix,
    pub bundles_bundle_level: Matrix,
    pub items_item_level: Matrix,
    pub users_item_level: Option<Matrix>,
}

fn xavier_normal(rows: usize, dim: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let std = (2.0 / (rows + dim) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    let data = (0..rows * dim).map(|_| normal.sample(rng)).collect();
    Matrix::from_vec(rows, dim, data).expect("sized buffer")
}

impl ParameterSet {
    /// Xavier-normal initialization, one RNG stream drawn in table order.
    pub fn init(
        num_users: usize,
        num_items: usize,
        num_bundles: usize,
        dim: usize,
        shared_user_embedding: bool,
        seed: u64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(EbrecError::contract("embedding width must be at least 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let users_bundle_level = xavier_normal(num_users, dim, &mut rng);
        let bundles_bundle_level = xavier_normal(num_bundles, dim, &mut rng);
        let items_item_level = xavier_normal(num_items, dim, &mut rng);
        let users_item_level =
            (!shared_user_embedding).then(|| xavier_normal(num_users, dim, &mut rng));
        Ok(ParameterSet {
            users_bundle_level,
            bundles_bundle_level,
            items_item_level,
            users_item_level,
        })
    }

    pub fn num_users(&self) -> usize {
        self.users_bundle_level.rows()
    }

    pub fn num_items(&self) -> usize {
        self.items_item_level.rows()
    }

    pub fn num_bundles(&self) -> usize {
        self.bundles_bundle_level.rows()
    }

    pub fn dim(&self) -> usize {
        self.users_bundle_level.dim()
    }

    pub fn shares_user_embedding(&self) -> bool {
        self.users_item_level.is_none()
    }

    /// Layer-0 user table of the item-level view.
    pub fn user_item_table(&self) -> &Matrix {
        self.users_item_level
            .as_ref()
            .unwrap_or(&self.users_bundle_level)
    }

    pub fn tables(&self) -> Vec<&Matrix> {
        let mut t = vec![
            &self.users_bundle_level,
            &self.bundles_bundle_level,
            &self.items_item_level,
        ];
        t.extend(self.users_item_level.as_ref());
        t
    }

    pub fn tables_mut(&mut self) -> Vec<&mut Matrix> {
        let mut t = vec![
            &mut self.users_bundle_level,
            &mut self.bundles_bundle_level,
            &mut self.items_item_level,
        ];
        t.extend(self.users_item_level.as_mut());
        t
    }

    pub fn table_names(&self) -> &'static [&'static str] {
        if self.shares_user_embedding() {
            &["users_bundle_level", "bundles_bundle_level", "items_item_level"]
        } else {
            &[
                "users_bundle_level",
                "bundles_bundle_level",
                "items_item_level",
                "users_item_level",
            ]
        }
    }

    pub fn zeros_like(&self) -> ParameterSet {
        ParameterSet {
            users_bundle_level: Matrix::zeros(self.num_users(), self.dim()),
            bundles_bundle_level: Matrix::zeros(self.num_bundles(), self.dim()),
            items_item_level: Matrix::zeros(self.num_items(), self.dim()),
            users_item_level: self
                .users_item_level
                .as_ref()
                .map(|m| Matrix::zeros(m.rows(), m.dim())),
        }
    }

    pub fn scaled(&self, alpha: f64) -> ParameterSet {
        let mut p = self.clone();
        p.tables_mut().into_iter().for_each(|t| t.scale(alpha));
        p
    }

    /// Squared L2 norm over every table.
    pub fn squared_norm(&self) -> f64 {
        self.tables().iter().map(|t| t.sum_of_squares()).sum()
    }

    pub fn parameter_count(&self) -> usize {
        self.tables().iter().map(|t| t.as_slice().len()).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(44 + 8 * self.parameter_count());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        let flags = if self.shares_user_embedding() {
            FLAG_SHARED_USER
        } else {
            0
        };
        for v in [
            self.num_users(),
            self.num_items(),
            self.num_bundles(),
            self.dim(),
        ] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        out.extend_from_slice(&flags.to_le_bytes());
        for t in self.tables() {
            for v in t.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ParameterSet> {
        if bytes.len() < 44 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(EbrecError::contract("not an EBR1 checkpoint"));
        }
        let word = |k: usize| {
            let s = 4 + 8 * k;
            u64::from_le_bytes(bytes[s..s + 8].try_into().expect("8 bytes"))
        };
        let (m, n, o, d, flags) = (
            word(0) as usize,
            word(1) as usize,
            word(2) as usize,
            word(3) as usize,
            word(4),
        );
        let shared = flags & FLAG_SHARED_USER != 0;
        let shapes: Vec<usize> = if shared { vec![m, o, n] } else { vec![m, o, n, m] };
        let expected = 44 + 8 * d * shapes.iter().sum::<usize>();
        if bytes.len() != expected {
            return Err(EbrecError::contract(format!(
                "checkpoint is {} bytes, header implies {expected}",
                bytes.len()
            )));
        }
        let mut cursor = 44;
        let mut tables = Vec::with_capacity(shapes.len());
        for rows in shapes {
            let data = bytes[cursor..cursor + 8 * rows * d]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            cursor += 8 * rows * d;
            tables.push(Matrix::from_vec(rows, d, data)?);
        }
        let mut it = tables.into_iter();
        Ok(ParameterSet {
            users_bundle_level: it.next().expect("table"),
            bundles_bundle_level: it.next().expect("table"),
            items_item_level: it.next().expect("table"),
            users_item_level: it.next(),
        })
    }

    pub fn write_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| EbrecError::io(path, e))
    }

    pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<ParameterSet> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| EbrecError::io(path, e))?;
        ParameterSet::from_bytes(&bytes)
    }
}

/// Graphs and composition structure a forward pass runs over.
#[derive(Clone, Copy, Debug)]
pub struct ForwardContext<'a> {
    pub ub_graph: &'a BipartiteGraph,
    pub ui_graph: &'a BipartiteGraph,
    pub composer: &'a ComposerInputs,
    /// Whether the mediated (bundle → user → item) pathway contributes.
    pub use_mediated: bool,
    pub layers: usize,
}

/// Fused embeddings of both views plus the composer intermediates.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewEmbeddings {
    pub users_bundle_level: Matrix,
    pub bundles_bundle_level: Matrix,
    pub users_item_level: Matrix,
    pub items_item_level: Matrix,
    pub bundles_affiliation: Matrix,
    pub bundles_mediated: Matrix,
    pub bundles_item_level: Matrix,
}

pub fn forward(params: &ParameterSet, ctx: &ForwardContext<'_>) -> Result<ViewEmbeddings> {
    let (num_users, num_items, num_bundles) = (
        params.num_users(),
        params.num_items(),
        params.num_bundles(),
    );
    if ctx.ub_graph.left_count() != num_users
        || ctx.ub_graph.right_count() != num_bundles
        || ctx.ui_graph.left_count() != num_users
        || ctx.ui_graph.right_count() != num_items
        || ctx.composer.num_bundles() != num_bundles
        || ctx.composer.num_items() != num_items
    {
        return Err(EbrecError::contract(format!(
            "parameters are {num_users} users / {num_items} items / {num_bundles} bundles \
             but graphs or composer disagree"
        )));
    }
    let (users_b, bundles_b) = ctx.ub_graph.propagate_fused(
        &params.users_bundle_level,
        &params.bundles_bundle_level,
        ctx.layers,
    )?;
    let (users_i, items_i) = ctx.ui_graph.propagate_fused(
        params.user_item_table(),
        &params.items_item_level,
        ctx.layers,
    )?;
    let affiliation = ctx.composer.compose_affiliation(&items_i)?;
    let mediated = if ctx.use_mediated {
        ctx.composer.compose_mediated(&items_i)?
    } else {
        Matrix::zeros(num_bundles, params.dim())
    };
    let mut combined = mediated.clone();
    combined.add_assign(&affiliation);
    Ok(ViewEmbeddings {
        users_bundle_level: users_b,
        bundles_bundle_level: bundles_b,
        users_item_level: users_i,
        items_item_level: items_i,
        bundles_affiliation: affiliation,
        bundles_mediated: mediated,
        bundles_item_level: combined,
    })
}

impl ViewEmbeddings {
    pub fn num_users(&self) -> usize {
        self.users_bundle_level.rows()
    }

    pub fn num_bundles(&self) -> usize {
        self.bundles_bundle_level.rows()
    }

    /// `⟨e_u^B, e_b^B⟩ + ⟨e_u^I, e_b^I⟩`, the inner product of the
    /// concatenated two-view embeddings.
    pub fn score(&self, user: usize, bundle: usize) -> Result<f64> {
        if user >= self.num_users() || bundle >= self.num_bundles() {
            return Err(EbrecError::contract(format!(
                "score({user}, {bundle}) outside {} users x {} bundles",
                self.num_users(),
                self.num_bundles()
            )));
        }
        Ok(self.score_unchecked(user, bundle))
    }

    #[inline]
    pub(crate) fn score_unchecked(&self, user: usize, bundle: usize) -> f64 {
        dot(
            self.users_bundle_level.row(user),
            self.bundles_bundle_level.row(bundle),
        ) + dot(
            self.users_item_level.row(user),
            self.bundles_item_level.row(bundle),
        )
    }

    /// Scores of one user against every bundle.
    pub fn score_all(&self, user: usize) -> Result<Vec<f64>> {
        if user >= self.num_users() {
            return Err(EbrecError::contract(format!("user {user} out of range")));
        }
        Ok((0..self.num_bundles())
            .into_par_iter()
            .map(|b| self.score_unchecked(user, b))
            .collect())
    }

    pub fn scaled(&self, alpha: f64) -> ViewEmbeddings {
        ViewEmbeddings {
            users_bundle_level: self.users_bundle_level.scaled(alpha),
            bundles_bundle_level: self.bundles_bundle_level.scaled(alpha),
            users_item_level: self.users_item_level.scaled(alpha),
            items_item_level: self.items_item_level.scaled(alpha),
            bundles_affiliation: self.bundles_affiliation.scaled(alpha),
            bundles_mediated: self.bundles_mediated.scaled(alpha),
            bundles_item_level: self.bundles_item_level.scaled(alpha),
        }
    }
}
