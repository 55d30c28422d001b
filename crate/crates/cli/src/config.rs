use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use ebrec::augmentor::{PredictorKind, PretrainConfig, AUGMENTED_FILE};
use ebrec::trainer::{Ablation, TrainConfig};
use ebrec::{EbrecError, Result};
use serde::{Deserialize, Serialize};

/// Effective configuration of one run. Every field is materialized so the
/// echoed copy in the run metadata reproduces the run on its own.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub output: PathBuf,
    /// Defaults to `<output>/predictor.ckpt`.
    pub predictor_checkpoint: Option<PathBuf>,
    /// Defaults to `<output>/augmented_user_item.txt`.
    pub augmented: Option<PathBuf>,
    pub threads: Option<usize>,
    pub train: TrainConfig,
    pub pretrain: PretrainConfig,
    pub eval: EvalConfig,
    pub grid: GridConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: PathBuf::from("data/Youshu"),
            output: PathBuf::from("runs/default"),
            predictor_checkpoint: None,
            augmented: None,
            threads: None,
            train: TrainConfig::default(),
            pretrain: PretrainConfig::default(),
            eval: EvalConfig::default(),
            grid: GridConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub cutoffs: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { cutoffs: vec![20, 40] }
    }
}

/// Value lists swept by `grid`; an empty list keeps the base value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
    pub tau: Vec<f64>,
    pub k_aug: Vec<usize>,
    pub ablation: Vec<Ablation>,
    pub seed: Vec<u64>,
}

impl RunConfig {
    /// Parses a TOML file. Relative paths inside it resolve against its directory.
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| EbrecError::io(path, e))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| EbrecError::Parse {
            file: path.to_path_buf(),
            line: e.span().map_or(0, |s| text[..s.start].lines().count().max(1)),
            message: e.message().to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.dataset);
        rebase(&mut cfg.output);
        if let Some(p) = cfg.predictor_checkpoint.as_mut() {
            rebase(p);
        }
        if let Some(p) = cfg.augmented.as_mut() {
            rebase(p);
        }
        Ok(cfg)
    }

    pub fn predictor_path(&self) -> PathBuf {
        self.predictor_checkpoint
            .clone()
            .unwrap_or_else(|| self.output.join("predictor.ckpt"))
    }

    pub fn augmented_path(&self) -> PathBuf {
        self.augmented.clone().unwrap_or_else(|| self.output.join(AUGMENTED_FILE))
    }

    /// Fills defaulted paths so the echoed config is fully explicit.
    pub fn materialize(mut self) -> RunConfig {
        self.predictor_checkpoint = Some(self.predictor_path());
        self.augmented = Some(self.augmented_path());
        self
    }
}

/// Maps a bare dataset name onto `<data root>/<Name>`; anything else is a path.
pub fn resolve_dataset(arg: &str) -> PathBuf {
    let canonical = match arg.to_ascii_lowercase().as_str() {
        "youshu" => Some("Youshu"),
        "netease" => Some("NetEase"),
        "ifashion" => Some("iFashion"),
        _ => None,
    };
    match canonical {
        Some(name) if !Path::new(arg).exists() => {
            let root = std::env::var_os("EBREC_DATA_ROOT").map_or_else(|| PathBuf::from("data"), PathBuf::from);
            root.join(name)
        }
        _ => PathBuf::from(arg),
    }
}

/// Flags shared by every subcommand; each overrides the config file.
#[derive(Args, Clone, Debug, Default)]
pub struct Overrides {
    /// TOML run configuration.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Dataset directory or one of youshu, netease, ifashion.
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Worker threads for the global pool.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub k_aug: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub eval_interval: Option<usize>,
    /// full, ebrec-c or ebrec-e.
    #[arg(long)]
    pub ablation: Option<String>,
    /// mf_bpr or lightgcn_ui.
    #[arg(long)]
    pub predictor: Option<String>,
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub predictor_checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub augmented: Option<PathBuf>,
    #[arg(long)]
    pub shared_user_embedding: bool,
    #[arg(long)]
    pub augment_propagation_graph: bool,
    /// Keep validation positives rankable during test evaluation.
    #[arg(long)]
    pub no_mask_valid_at_test: bool,
}

impl Overrides {
    /// Loads the config file (if any) and applies flag overrides.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(d) = &self.dataset {
            cfg.dataset = resolve_dataset(d);
        }
        if let Some(o) = &self.output {
            cfg.output = o.clone();
        }
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        if self.predictor_checkpoint.is_some() {
            cfg.predictor_checkpoint = self.predictor_checkpoint.clone();
        }
        if self.augmented.is_some() {
            cfg.augmented = self.augmented.clone();
        }
        let t = &mut cfg.train;
        macro_rules! set {
            ($($flag:ident => $field:expr),* $(,)?) => {
                $(if let Some(v) = self.$flag { $field = v; })*
            };
        }
        set!(
            seed => t.seed,
            epochs => t.epochs,
            dim => t.dim,
            layers => t.layers,
            lambda1 => t.lambda1,
            lambda2 => t.lambda2,
            tau => t.tau,
            k_aug => t.k_aug,
            dropout => t.dropout_rate,
            batch_size => t.batch_size,
            learning_rate => t.learning_rate,
            patience => t.patience,
            eval_interval => t.eval_interval,
            pretrain_epochs => cfg.pretrain.epochs,
            split_seed => cfg.pretrain.split_seed,
        );
        if let Some(a) = &self.ablation {
            cfg.train.ablation = a.parse()?;
        }
        if let Some(p) = &self.predictor {
            cfg.pretrain.predictor = p.parse::<PredictorKind>()?;
        }
        if self.shared_user_embedding {
            cfg.train.shared_user_embedding = true;
        }
        if self.augment_propagation_graph {
            cfg.train.augment_propagation_graph = true;
        }
        if self.no_mask_valid_at_test {
            cfg.train.mask_valid_at_test = false;
        }
        Ok(cfg)
    }
}
