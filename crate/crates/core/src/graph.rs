//! Symmetric degree-normalized bipartite graphs and LightGCN-style linear
//! propagation with layer-sum fusion.
//!
//! The propagation operator `P = [[0, A], [Aᵀ, 0]]`, with
//! `A = D_l^{-1/2} R D_r^{-1/2}`, is symmetric. Propagating a gradient through
//! the fused output is therefore the same computation as the forward pass,
//! which is what [`BipartiteGraph::backpropagate`] exploits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::Pair;
use crate::error::{EbrecError, Result};
use crate::matrix::{axpy, Matrix};

#[derive(Clone, Debug, PartialEq)]
struct Csr {
    offsets: Vec<usize>,
    targets: Vec<usize>,
    weights: Vec<f64>,
}

impl Csr {
    fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.offsets[i], self.offsets[i + 1]);
        (&self.targets[s..e], &self.weights[s..e])
    }

    fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    /// `out[i] = Σ_j w_ij · input[j]`, accumulated in ascending `j`.
    fn apply(&self, input: &Matrix, rows: usize) -> Matrix {
        let dim = input.dim();
        let mut out = Matrix::zeros(rows, dim);
        if dim == 0 {
            return out;
        }
        out.as_mut_slice()
            .par_chunks_mut(dim)
            .enumerate()
            .for_each(|(i, dst)| {
                let (targets, weights) = self.row(i);
                for (&j, &w) in targets.iter().zip(weights) {
                    axpy(w, input.row(j), dst);
                }
            });
        out
    }
}

/// Bipartite relation with edge weights `1 / (√deg_l · √deg_r)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BipartiteGraph {
    left_count: usize,
    right_count: usize,
    pairs: Vec<Pair>,
    by_left: Csr,
    by_right: Csr,
}

/// Per-layer and fused (summed) embeddings from [`BipartiteGraph::propagate`].
#[derive(Clone, Debug, PartialEq)]
pub struct PropagationResult {
    pub left_layers: Vec<Matrix>,
    pub right_layers: Vec<Matrix>,
    pub left_fused: Matrix,
    pub right_fused: Matrix,
}

impl BipartiteGraph {
    pub fn build(pairs: &[Pair], left_count: usize, right_count: usize) -> Result<Self> {
        if let Some(&(l, r)) = pairs.iter().find(|&&(l, r)| l >= left_count || r >= right_count) {
            return Err(EbrecError::contract(format!(
                "edge ({l}, {r}) outside a {left_count}x{right_count} graph"
            )));
        }
        let mut pairs = pairs.to_vec();
        pairs.sort_unstable();
        pairs.dedup();

        let mut left_deg = vec![0usize; left_count];
        let mut right_deg = vec![0usize; right_count];
        for &(l, r) in &pairs {
            left_deg[l] += 1;
            right_deg[r] += 1;
        }
        let weight = |l: usize, r: usize| {
            1.0 / ((left_deg[l] as f64).sqrt() * (right_deg[r] as f64).sqrt())
        };

        let by_left = Csr {
            offsets: offsets(&left_deg),
            targets: pairs.iter().map(|p| p.1).collect(),
            weights: pairs.iter().map(|&(l, r)| weight(l, r)).collect(),
        };

        let right_offsets = offsets(&right_deg);
        let mut cursor = right_offsets.clone();
        let mut targets = vec![0; pairs.len()];
        let mut weights = vec![0.0; pairs.len()];
        // pairs are sorted by left id, so each right row fills in ascending left order
        for &(l, r) in &pairs {
            let slot = cursor[r];
            targets[slot] = l;
            weights[slot] = weight(l, r);
            cursor[r] += 1;
        }
        let by_right = Csr {
            offsets: right_offsets,
            targets,
            weights,
        };

        Ok(BipartiteGraph {
            left_count,
            right_count,
            pairs,
            by_left,
            by_right,
        })
    }

    pub fn left_count(&self) -> usize {
        self.left_count
    }

    pub fn right_count(&self) -> usize {
        self.right_count
    }

    pub fn edge_count(&self) -> usize {
        self.pairs.len()
    }

    /// The sorted edge list this graph was built from.
    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn left_degree(&self, l: usize) -> usize {
        self.by_left.degree(l)
    }

    pub fn right_degree(&self, r: usize) -> usize {
        self.by_right.degree(r)
    }

    pub fn left_neighbors(&self, l: usize) -> (&[usize], &[f64]) {
        self.by_left.row(l)
    }

    pub fn right_neighbors(&self, r: usize) -> (&[usize], &[f64]) {
        self.by_right.row(r)
    }

    pub fn weight(&self, l: usize, r: usize) -> Option<f64> {
        let (targets, weights) = self.by_left.row(l);
        targets.binary_search(&r).ok().map(|k| weights[k])
    }

    /// Keeps each edge independently with probability `1 - rate` and
    /// renormalizes on the surviving degrees.
    pub fn edge_dropout(&self, rate: f64, seed: u64) -> Result<BipartiteGraph> {
        if !(0.0..1.0).contains(&rate) {
            return Err(EbrecError::contract(format!(
                "dropout rate {rate} outside [0, 1)"
            )));
        }
        if rate == 0.0 {
            return Ok(self.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kept: Vec<Pair> = self
            .pairs
            .iter()
            .copied()
            .filter(|_| rng.random::<f64>() >= rate)
            .collect();
        BipartiteGraph::build(&kept, self.left_count, self.right_count)
    }

    fn check_inputs(&self, left0: &Matrix, right0: &Matrix) -> Result<()> {
        if left0.rows() != self.left_count || right0.rows() != self.right_count {
            return Err(EbrecError::contract(format!(
                "graph is {}x{} but embeddings have {} and {} rows",
                self.left_count,
                self.right_count,
                left0.rows(),
                right0.rows()
            )));
        }
        if left0.dim() != right0.dim() {
            return Err(EbrecError::contract(format!(
                "embedding widths differ: {} vs {}",
                left0.dim(),
                right0.dim()
            )));
        }
        Ok(())
    }

    /// One layer: `(A · right, Aᵀ · left)`.
    fn step(&self, left: &Matrix, right: &Matrix) -> (Matrix, Matrix) {
        (
            self.by_left.apply(right, self.left_count),
            self.by_right.apply(left, self.right_count),
        )
    }

    /// Runs `layers` propagation steps and keeps every layer.
    pub fn propagate(
        &self,
        left0: &Matrix,
        right0: &Matrix,
        layers: usize,
    ) -> Result<PropagationResult> {
        self.check_inputs(left0, right0)?;
        let mut left_layers = vec![left0.clone()];
        let mut right_layers = vec![right0.clone()];
        for k in 0..layers {
            let (l, r) = self.step(&left_layers[k], &right_layers[k]);
            left_layers.push(l);
            right_layers.push(r);
        }
        let left_fused = layer_sum(&left_layers);
        let right_fused = layer_sum(&right_layers);
        Ok(PropagationResult {
            left_layers,
            right_layers,
            left_fused,
            right_fused,
        })
    }

    /// Fused output only, without retaining intermediate layers.
    pub fn propagate_fused(
        &self,
        left0: &Matrix,
        right0: &Matrix,
        layers: usize,
    ) -> Result<(Matrix, Matrix)> {
        self.check_inputs(left0, right0)?;
        let mut left_fused = left0.clone();
        let mut right_fused = right0.clone();
        let mut left = left0.clone();
        let mut right = right0.clone();
        for _ in 0..layers {
            let (l, r) = self.step(&left, &right);
            left_fused.add_assign(&l);
            right_fused.add_assign(&r);
            left = l;
            right = r;
        }
        Ok((left_fused, right_fused))
    }

    /// Maps gradients on the fused outputs back to the layer-0 inputs.
    pub fn backpropagate(
        &self,
        grad_left_fused: &Matrix,
        grad_right_fused: &Matrix,
        layers: usize,
    ) -> Result<(Matrix, Matrix)> {
        self.propagate_fused(grad_left_fused, grad_right_fused, layers)
    }
}

fn offsets(degrees: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(degrees.len() + 1);
    out.push(0);
    let mut acc = 0;
    for d in degrees {
        acc += d;
        out.push(acc);
    }
    out
}

fn layer_sum(layers: &[Matrix]) -> Matrix {
    let mut fused = layers[0].clone();
    for layer in &layers[1..] {
        fused.add_assign(layer);
    }
    fused
}
