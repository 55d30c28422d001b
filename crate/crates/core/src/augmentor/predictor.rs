use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EbrecError, Result};
use crate::matrix::{dot, Matrix};

pub const PREDICTOR_MAGIC: &[u8; 4] = b"EBP1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    /// Matrix factorization trained with BPR.
    MfBpr,
    /// LightGCN over the user-item graph, trained with BPR.
    LightgcnUi,
}

impl PredictorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PredictorKind::MfBpr => "mf_bpr",
            PredictorKind::LightgcnUi => "lightgcn_ui",
        }
    }

    fn code(self) -> u64 {
        match self {
            PredictorKind::MfBpr => 0,
            PredictorKind::LightgcnUi => 1,
        }
    }

    fn from_code(code: u64) -> Result<Self> {
        match code {
            0 => Ok(PredictorKind::MfBpr),
            1 => Ok(PredictorKind::LightgcnUi),
            other => Err(EbrecError::contract(format!("unknown predictor code {other}"))),
        }
    }
}

impl fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PredictorKind {
    type Err = EbrecError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mf_bpr" => Ok(PredictorKind::MfBpr),
            "lightgcn_ui" => Ok(PredictorKind::LightgcnUi),
            other => Err(EbrecError::contract(format!(
                "unknown predictor `{other}` (expected mf_bpr or lightgcn_ui)"
            ))),
        }
    }
}

/// A trained user-item preference model.
pub trait UiPredictor: Send + Sync {
    fn kind(&self) -> PredictorKind;
    fn num_users(&self) -> usize;
    fn num_items(&self) -> usize;
    fn score(&self, user: usize, item: usize) -> f64;

    /// Scores of `user` against every item.
    fn score_items(&self, user: usize) -> Vec<f64> {
        (0..self.num_items()).map(|i| self.score(user, i)).collect()
    }
}

/// Inner-product predictor over final user and item embeddings. Both shipped
/// pretrainers reduce to this at inference time (LightGCN stores its
/// propagated embeddings).
#[derive(Clone, Debug, PartialEq)]
pub struct FactorPredictor {
    pub kind: PredictorKind,
    pub users: Matrix,
    pub items: Matrix,
}

impl UiPredictor for FactorPredictor {
    fn kind(&self) -> PredictorKind {
        self.kind
    }

    fn num_users(&self) -> usize {
        self.users.rows()
    }

    fn num_items(&self) -> usize {
        self.items.rows()
    }

    fn score(&self, user: usize, item: usize) -> f64 {
        dot(self.users.row(user), self.items.row(item))
    }

    fn score_items(&self, user: usize) -> Vec<f64> {
        let u = self.users.row(user);
        (0..self.items.rows())
            .into_par_iter()
            .map(|i| dot(u, self.items.row(i)))
            .collect()
    }
}

impl FactorPredictor {
    /// `EBP1`, then kind, users, items, width as little-endian u64, then the
    /// user and item tables as little-endian f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(PREDICTOR_MAGIC);
        for v in [
            self.kind.code(),
            self.users.rows() as u64,
            self.items.rows() as u64,
            self.users.dim() as u64,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.users.as_slice().iter().chain(self.items.as_slice()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 36 || &bytes[..4] != PREDICTOR_MAGIC {
            return Err(EbrecError::contract("not an EBP1 predictor checkpoint"));
        }
        let word = |k: usize| {
            let s = 4 + 8 * k;
            u64::from_le_bytes(bytes[s..s + 8].try_into().expect("8 bytes"))
        };
        let kind = PredictorKind::from_code(word(0))?;
        let (m, n, d) = (word(1) as usize, word(2) as usize, word(3) as usize);
        if bytes.len() != 36 + 8 * d * (m + n) {
            return Err(EbrecError::contract("predictor checkpoint has wrong length"));
        }
        let floats: Vec<f64> = bytes[36..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let (u, i) = floats.split_at(m * d);
        Ok(FactorPredictor {
            kind,
            users: Matrix::from_vec(m, d, u.to_vec())?,
            items: Matrix::from_vec(n, d, i.to_vec())?,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| EbrecError::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| EbrecError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
