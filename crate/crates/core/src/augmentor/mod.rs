//! Pseudo-interaction augmentation of the user-item relation.
//!
//! A user-item predictor is pretrained with BPR on an internal split of the
//! observed interactions. Each user then receives the `k_aug` highest-scoring
//! items they have not interacted with, and the union feeds the mediated
//! composer pathway.

mod neighbors;
mod predictor;
mod pretrain;

pub use neighbors::{
    generate_topk, read_augmented, write_augmented, AugmentHeader, AugmentedNeighbors, Provenance,
    AUGMENTED_FILE, STANDARD_K_AUG,
};
pub use predictor::{FactorPredictor, PredictorKind, UiPredictor};
pub use pretrain::{
    pretrain_predictor, split_pairs, PretrainConfig, PretrainEpoch, PretrainOutcome, PretrainReport,
};
