//! Bundle recommendation with two-level graph propagation.
//!
//! Users and bundles are embedded twice. The bundle-level view propagates
//! over the user-bundle graph. The item-level view propagates over the
//! user-item graph and composes bundles from item embeddings through two
//! pathways: the bundle's own items, and the items of the users who
//! interacted with the bundle (optionally augmented with pseudo-interactions
//! from a pretrained user-item predictor). Training combines BPR ranking with
//! a cross-view contrastive loss.

pub mod augmentor;
pub mod composer;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod graph;
pub mod matrix;
pub mod model;
pub mod objective;
pub mod optim;
pub mod overlap;
pub mod trainer;

pub use error::{EbrecError, Result};
