//! Item-level bundle composition.
//!
//! Two pathways turn item embeddings into bundle embeddings:
//!
//! * affiliation: the mean of the bundle's own items,
//! * mediated: the mean, over users who interacted with the bundle, of each
//!   user's mean item embedding (bundle → user → item).
//!
//! The final item-level bundle embedding is their plain sum. Every sum is
//! accumulated in ascending id order so outputs do not depend on the order in
//! which neighbor lists were supplied.

use rayon::prelude::*;

use crate::error::{EbrecError, Result};
use crate::matrix::{axpy, Matrix};

#[derive(Clone, Debug, PartialEq)]
pub struct ComposerInputs {
    num_items: usize,
    num_users: usize,
    bundle_items: Vec<Vec<usize>>,
    bundle_users: Vec<Vec<usize>>,
    user_items: Vec<Vec<usize>>,
}

/// All three composer outputs for one set of item embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct Composition {
    pub affiliation: Matrix,
    pub mediated: Matrix,
    pub combined: Matrix,
}

fn canonical(mut lists: Vec<Vec<usize>>, bound: usize, what: &str) -> Result<Vec<Vec<usize>>> {
    for (owner, list) in lists.iter_mut().enumerate() {
        list.sort_unstable();
        list.dedup();
        if let Some(&bad) = list.last().filter(|&&id| id >= bound) {
            return Err(EbrecError::contract(format!(
                "{what} list of entity {owner} references id {bad} >= {bound}"
            )));
        }
    }
    Ok(lists)
}

fn mean_rows(ids: &[usize], table: &Matrix, dst: &mut [f64]) {
    if ids.is_empty() {
        return;
    }
    for &id in ids {
        axpy(1.0, table.row(id), dst);
    }
    let scale = 1.0 / ids.len() as f64;
    dst.iter_mut().for_each(|v| *v *= scale);
}

impl ComposerInputs {
    /// `bundle_items[b]` = N_b^I, `bundle_users[b]` = N_b^U, `user_items[u]` = N_u^I.
    pub fn new(
        num_items: usize,
        bundle_items: Vec<Vec<usize>>,
        bundle_users: Vec<Vec<usize>>,
        user_items: Vec<Vec<usize>>,
    ) -> Result<Self> {
        if bundle_items.len() != bundle_users.len() {
            return Err(EbrecError::contract(format!(
                "{} bundle item lists but {} bundle user lists",
                bundle_items.len(),
                bundle_users.len()
            )));
        }
        let num_users = user_items.len();
        Ok(ComposerInputs {
            num_items,
            num_users,
            bundle_items: canonical(bundle_items, num_items, "bundle item")?,
            bundle_users: canonical(bundle_users, num_users, "bundle user")?,
            user_items: canonical(user_items, num_items, "user item")?,
        })
    }

    pub fn num_bundles(&self) -> usize {
        self.bundle_items.len()
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn bundle_items(&self) -> &[Vec<usize>] {
        &self.bundle_items
    }

    pub fn bundle_users(&self) -> &[Vec<usize>] {
        &self.bundle_users
    }

    pub fn user_items(&self) -> &[Vec<usize>] {
        &self.user_items
    }

    fn check_items(&self, items: &Matrix) -> Result<()> {
        if items.rows() != self.num_items {
            return Err(EbrecError::contract(format!(
                "composer expects {} item rows, got {}",
                self.num_items,
                items.rows()
            )));
        }
        Ok(())
    }

    fn check_bundles(&self, grad: &Matrix) -> Result<()> {
        if grad.rows() != self.num_bundles() {
            return Err(EbrecError::contract(format!(
                "composer expects {} bundle rows, got {}",
                self.num_bundles(),
                grad.rows()
            )));
        }
        Ok(())
    }

    /// Mean of each bundle's items; empty bundles get the zero vector.
    pub fn compose_affiliation(&self, items: &Matrix) -> Result<Matrix> {
        self.check_items(items)?;
        let dim = items.dim();
        let mut out = Matrix::zeros(self.num_bundles(), dim);
        if dim > 0 {
            out.as_mut_slice()
                .par_chunks_mut(dim)
                .zip(self.bundle_items.par_iter())
                .for_each(|(dst, ids)| mean_rows(ids, items, dst));
        }
        Ok(out)
    }

    /// Mean item embedding of every user (zero for users without items).
    pub fn user_item_means(&self, items: &Matrix) -> Result<Matrix> {
        self.check_items(items)?;
        let dim = items.dim();
        let mut out = Matrix::zeros(self.num_users, dim);
        if dim > 0 {
            out.as_mut_slice()
                .par_chunks_mut(dim)
                .zip(self.user_items.par_iter())
                .for_each(|(dst, ids)| mean_rows(ids, items, dst));
        }
        Ok(out)
    }

    /// Nested mean through the bundle's users; bundles without users get zero.
    pub fn compose_mediated(&self, items: &Matrix) -> Result<Matrix> {
        let user_means = self.user_item_means(items)?;
        let dim = items.dim();
        let mut out = Matrix::zeros(self.num_bundles(), dim);
        if dim > 0 {
            out.as_mut_slice()
                .par_chunks_mut(dim)
                .zip(self.bundle_users.par_iter())
                .for_each(|(dst, users)| mean_rows(users, &user_means, dst));
        }
        Ok(out)
    }

    pub fn compose(&self, items: &Matrix) -> Result<Composition> {
        let affiliation = self.compose_affiliation(items)?;
        let mediated = self.compose_mediated(items)?;
        let mut combined = mediated.clone();
        combined.add_assign(&affiliation);
        Ok(Composition {
            affiliation,
            mediated,
            combined,
        })
    }

    /// Transpose of [`Self::compose_affiliation`]: bundle gradients to item gradients.
    pub fn affiliation_transpose(&self, grad_bundles: &Matrix) -> Result<Matrix> {
        self.check_bundles(grad_bundles)?;
        let mut out = Matrix::zeros(self.num_items, grad_bundles.dim());
        for (b, ids) in self.bundle_items.iter().enumerate() {
            if ids.is_empty() {
                continue;
            }
            let scale = 1.0 / ids.len() as f64;
            for &i in ids {
                axpy(scale, grad_bundles.row(b), out.row_mut(i));
            }
        }
        Ok(out)
    }

    /// Transpose of [`Self::compose_mediated`].
    pub fn mediated_transpose(&self, grad_bundles: &Matrix) -> Result<Matrix> {
        self.check_bundles(grad_bundles)?;
        let dim = grad_bundles.dim();
        let mut grad_users = Matrix::zeros(self.num_users, dim);
        for (b, users) in self.bundle_users.iter().enumerate() {
            if users.is_empty() {
                continue;
            }
            let scale = 1.0 / users.len() as f64;
            for &u in users {
                axpy(scale, grad_bundles.row(b), grad_users.row_mut(u));
            }
        }
        let mut out = Matrix::zeros(self.num_items, dim);
        for (u, ids) in self.user_items.iter().enumerate() {
            if ids.is_empty() {
                continue;
            }
            let scale = 1.0 / ids.len() as f64;
            for &i in ids {
                axpy(scale, grad_users.row(u), out.row_mut(i));
            }
        }
        Ok(out)
    }
}
