use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ebrec::augmentor::{
    generate_topk, pretrain_predictor, read_augmented, write_augmented, AugmentHeader, AugmentedNeighbors,
    FactorPredictor, PretrainOutcome, UiPredictor,
};
use ebrec::dataset::{load_dataset, InteractionDataset, Split};
use ebrec::eval::{curve_cutoffs, rank_all, EvalOptions, Metric, RankingResult};
use ebrec::model::ParameterSet;
use ebrec::overlap::{overlap_report, BINS};
use ebrec::trainer::{train, ModelInputs};
use ebrec::{EbrecError, Result};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;

pub const MODEL_FILE: &str = "model.ckpt";
pub const METRICS_FILE: &str = "metrics.jsonl";

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| EbrecError::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| EbrecError::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    write_file(path, text + "\n")
}

/// Echoes the effective config next to the command's outputs.
fn write_metadata(cfg: &RunConfig, command: &str) -> Result<()> {
    let meta = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
    });
    write_json(&cfg.output.join(format!("{command}_meta.json")), &meta)
}

fn write_timings(cfg: &RunConfig, command: &str, value: serde_json::Value) -> Result<()> {
    write_json(&cfg.output.join(format!("{command}_timings.json")), &value)
}

pub fn load(cfg: &RunConfig) -> Result<InteractionDataset> {
    let (ds, report) = load_dataset(&cfg.dataset)?;
    log::info!(
        "loaded {}: {} users, {} items, {} bundles, {} U-I, {}/{}/{} U-B, {} B-I ({} duplicates dropped)",
        cfg.dataset.display(),
        ds.num_users,
        ds.num_items,
        ds.num_bundles,
        ds.ui_pairs.len(),
        ds.ub_train.len(),
        ds.ub_valid.len(),
        ds.ub_test.len(),
        ds.bi_pairs.len(),
        report.total_duplicates()
    );
    Ok(ds)
}

/// Trains the user-item predictor and writes its checkpoint and report.
pub fn pretrain(cfg: &RunConfig, ds: &InteractionDataset) -> Result<Option<FactorPredictor>> {
    write_metadata(cfg, "pretrain")?;
    let started = Instant::now();
    match pretrain_predictor(ds, &cfg.pretrain)? {
        PretrainOutcome::Disabled { reason } => {
            log::warn!("augmentation disabled: {reason}");
            Ok(None)
        }
        PretrainOutcome::Trained { predictor, report } => {
            let path = cfg.predictor_path();
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| EbrecError::io(parent, e))?;
            }
            predictor.write(&path)?;
            write_json(&cfg.output.join("pretrain_report.json"), &report)?;
            write_timings(cfg, "pretrain", json!({ "seconds": started.elapsed().as_secs_f64() }))?;
            log::info!(
                "predictor {} written to {}; internal recall@20 {:?} -> {:?}",
                report.predictor,
                path.display(),
                report.initial_recall_at_20,
                report.best_recall_at_20
            );
            Ok(Some(predictor))
        }
    }
}

fn augment_header(cfg: &RunConfig) -> AugmentHeader {
    let p = &cfg.pretrain;
    AugmentHeader::new(&[
        ("predictor", p.predictor.to_string()),
        ("dim", p.dim.to_string()),
        ("epochs", p.epochs.to_string()),
        ("seed", p.seed.to_string()),
        ("split_seed", p.split_seed.to_string()),
    ])
}

fn predictor_for(cfg: &RunConfig, ds: &InteractionDataset) -> Result<Option<FactorPredictor>> {
    let path = cfg.predictor_path();
    if path.exists() {
        let p = FactorPredictor::read(&path)?;
        if p.num_users() != ds.num_users || p.num_items() != ds.num_items {
            return Err(EbrecError::contract(format!(
                "{} covers {} users x {} items, dataset has {} x {}",
                path.display(),
                p.num_users(),
                p.num_items(),
                ds.num_users,
                ds.num_items
            )));
        }
        Ok(Some(p))
    } else {
        log::info!("no predictor at {}; pretraining", path.display());
        pretrain(cfg, ds)
    }
}

/// Generates the augmented relation for the configured budget and writes it.
pub fn augment(cfg: &RunConfig, ds: &InteractionDataset) -> Result<AugmentedNeighbors> {
    let k = cfg.train.effective_k_aug();
    let aug = if k == 0 {
        AugmentedNeighbors::observed_only(ds)
    } else {
        match predictor_for(cfg, ds)? {
            Some(p) => generate_topk(&p, ds, k)?,
            None => AugmentedNeighbors::observed_only(ds),
        }
    };
    let path = cfg.augmented_path();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| EbrecError::io(parent, e))?;
    }
    write_augmented(&path, &aug, &augment_header(cfg))?;
    log::info!(
        "{} generated pairs (k_aug {k}) written to {}",
        aug.generated_count(),
        path.display()
    );
    Ok(aug)
}

/// Reuses an existing augmentation file when it matches the budget and the
/// dataset; otherwise regenerates it (when `build` is set).
pub fn augmentation(cfg: &RunConfig, ds: &InteractionDataset, build: bool) -> Result<AugmentedNeighbors> {
    let k = cfg.train.effective_k_aug();
    if k == 0 {
        return Ok(AugmentedNeighbors::observed_only(ds));
    }
    let path = cfg.augmented_path();
    if path.exists() {
        let (aug, header) = read_augmented(&path, ds.num_users, ds.num_items)?;
        let observed_ok = aug.check_observed(ds).is_ok();
        if aug.k_aug() == k && observed_ok {
            return Ok(aug);
        }
        if !build {
            return Err(EbrecError::contract(format!(
                "{} holds k_aug={} (header {:?}), configuration needs k_aug={k}",
                path.display(),
                aug.k_aug(),
                header.get("k_aug")
            )));
        }
        log::warn!("{} does not match k_aug={k}; regenerating", path.display());
    } else if !build {
        return Err(EbrecError::MissingFile(path));
    }
    augment(cfg, ds)
}

#[derive(Serialize)]
struct MetricLine<'a> {
    split: &'a str,
    metric: &'a str,
    cutoff: usize,
    value: f64,
}

fn metric_lines(split: &str, res: &RankingResult) -> Vec<String> {
    let mut out = Vec::new();
    for &k in &res.cutoffs {
        for metric in [Metric::Recall, Metric::Ndcg] {
            let line = MetricLine {
                split,
                metric: metric.name(),
                cutoff: k,
                value: res.get(metric, k).unwrap_or(0.0),
            };
            out.push(serde_json::to_string(&line).expect("serializable"));
        }
    }
    out
}

fn split_name(split: Split) -> &'static str {
    match split {
        Split::Valid => "valid",
        Split::Test => "test",
    }
}

fn evaluate(
    cfg: &RunConfig,
    ds: &InteractionDataset,
    aug: &AugmentedNeighbors,
    params: &ParameterSet,
    splits: &[Split],
    cutoffs: &[usize],
) -> Result<Vec<(Split, RankingResult)>> {
    let inputs = ModelInputs::new(ds, aug, &cfg.train)?;
    let views = inputs.views(params)?;
    let opts = EvalOptions {
        mask_valid_at_test: cfg.train.mask_valid_at_test,
    };
    splits
        .iter()
        .map(|&s| Ok((s, rank_all(&views, ds, s, cutoffs, opts)?)))
        .collect()
}

pub struct TrainSummary {
    pub best_epoch: Option<usize>,
    pub valid_ndcg_at_20: Option<f64>,
    pub metrics: Vec<(Split, RankingResult)>,
}

pub fn train_run(cfg: &RunConfig, ds: &InteractionDataset) -> Result<TrainSummary> {
    write_metadata(cfg, "train")?;
    let aug = augmentation(cfg, ds, true)?;
    let started = Instant::now();
    let out = train(ds, &aug, &cfg.train)?;
    let seconds = started.elapsed().as_secs_f64();
    out.params.write_checkpoint(cfg.output.join(MODEL_FILE))?;
    write_json(&cfg.output.join("train_report.json"), &out.report.without_timings())?;
    write_timings(
        cfg,
        "train",
        json!({ "seconds": seconds, "epoch_seconds": out.report.epoch_seconds }),
    )?;
    let metrics = evaluate(cfg, ds, &aug, &out.params, &[Split::Valid, Split::Test], &cfg.eval.cutoffs)?;
    let lines: Vec<String> = metrics
        .iter()
        .flat_map(|(s, r)| metric_lines(split_name(*s), r))
        .collect();
    write_file(&cfg.output.join(METRICS_FILE), lines.join("\n") + "\n")?;
    for line in &lines {
        log::info!("{line}");
    }
    Ok(TrainSummary {
        best_epoch: out.report.best_epoch,
        valid_ndcg_at_20: out.report.best_ndcg_at_20,
        metrics,
    })
}

pub struct EvalRequest {
    pub checkpoint: Option<PathBuf>,
    pub splits: Vec<Split>,
    pub curve: bool,
    pub per_user: bool,
}

/// Evaluates a checkpoint; returns the metric lines also printed to stdout.
pub fn eval_run(cfg: &RunConfig, ds: &InteractionDataset, req: &EvalRequest) -> Result<Vec<String>> {
    let path = req.checkpoint.clone().unwrap_or_else(|| cfg.output.join(MODEL_FILE));
    let params = ParameterSet::read_checkpoint(&path)?;
    let found = (params.num_users(), params.num_items(), params.num_bundles());
    if found != (ds.num_users, ds.num_items, ds.num_bundles) {
        return Err(EbrecError::contract(format!(
            "{} has {} users, {} items, {} bundles; dataset has {}, {}, {}",
            path.display(),
            found.0,
            found.1,
            found.2,
            ds.num_users,
            ds.num_items,
            ds.num_bundles
        )));
    }
    if params.dim() != cfg.train.dim {
        return Err(EbrecError::contract(format!(
            "{} has embedding width {}, configuration expects {}",
            path.display(),
            params.dim(),
            cfg.train.dim
        )));
    }
    if params.shares_user_embedding() != cfg.train.shared_user_embedding {
        return Err(EbrecError::contract(format!(
            "{} shared_user_embedding={}, configuration says {}",
            path.display(),
            params.shares_user_embedding(),
            cfg.train.shared_user_embedding
        )));
    }
    let aug = augmentation(cfg, ds, false)?;
    let cutoffs = if req.curve { curve_cutoffs() } else { cfg.eval.cutoffs.clone() };
    let results = evaluate(cfg, ds, &aug, &params, &req.splits, &cutoffs)?;
    let mut lines = Vec::new();
    for (split, res) in &results {
        lines.extend(metric_lines(split_name(*split), res));
    }
    let name = if req.curve { "eval_curve.jsonl" } else { "eval_metrics.jsonl" };
    write_file(&cfg.output.join(name), lines.join("\n") + "\n")?;
    if req.per_user {
        let mut per_user = Vec::new();
        for (split, res) in &results {
            let k = *cutoffs.iter().max().expect("non-empty cutoffs");
            for (idx, &u) in res.users.iter().enumerate() {
                let row = json!({
                    "split": split_name(*split),
                    "user": u,
                    "ranked": res.ranked[idx],
                    "relevant": res.relevant[idx],
                    "recall": cutoffs.iter().map(|&c| ebrec::eval::recall_at_k(&res.ranked[idx], &res.relevant[idx], c)).collect::<Vec<_>>(),
                    "ndcg": cutoffs.iter().map(|&c| ebrec::eval::ndcg_at_k(&res.ranked[idx], &res.relevant[idx], c)).collect::<Vec<_>>(),
                    "cutoffs": cutoffs,
                    "max_cutoff": k,
                });
                per_user.push(row.to_string());
            }
        }
        write_file(&cfg.output.join("eval_per_user.jsonl"), per_user.join("\n") + "\n")?;
    }
    let stdout = std::io::stdout();
    let mut handle = stdout.lock();
    for line in &lines {
        let _ = writeln!(handle, "{line}");
    }
    Ok(lines)
}

pub fn overlap_run(cfg: &RunConfig, ds: &InteractionDataset) -> Result<serde_json::Value> {
    let report = overlap_report(ds);
    let bins: Vec<serde_json::Value> = (0..BINS)
        .map(|k| {
            json!({
                "from": k as f64 / BINS as f64,
                "to": (k + 1) as f64 / BINS as f64,
                "bundles": report.histogram[k],
            })
        })
        .collect();
    let value = json!({
        "bundles": ds.num_bundles,
        "empty_bundles": report.empty_bundles,
        "mean_ratio": report.mean_ratio,
        "bins": bins,
    });
    write_json(&cfg.output.join("overlap_report.json"), &value)?;
    println!("{}", serde_json::to_string_pretty(&value).expect("serializable"));
    Ok(value)
}

/// Cartesian product of the grid lists; empty lists keep the base value.
pub fn grid_configs(cfg: &RunConfig) -> Vec<(String, RunConfig)> {
    let g = &cfg.grid;
    let t = &cfg.train;
    let or = |v: &Vec<f64>, base: f64| if v.is_empty() { vec![base] } else { v.clone() };
    let lambda1 = or(&g.lambda1, t.lambda1);
    let lambda2 = or(&g.lambda2, t.lambda2);
    let tau = or(&g.tau, t.tau);
    let k_aug = if g.k_aug.is_empty() { vec![t.k_aug] } else { g.k_aug.clone() };
    let ablation = if g.ablation.is_empty() { vec![t.ablation] } else { g.ablation.clone() };
    let seed = if g.seed.is_empty() { vec![t.seed] } else { g.seed.clone() };
    let mut out = Vec::new();
    for &a in &ablation {
        for &k in &k_aug {
            for &l1 in &lambda1 {
                for &l2 in &lambda2 {
                    for &ta in &tau {
                        for &s in &seed {
                            let name = format!("{a}_k{k}_l1-{l1}_l2-{l2}_tau-{ta}_seed{s}");
                            let mut run = cfg.clone();
                            run.output = cfg.output.join("grid").join(&name);
                            run.predictor_checkpoint = Some(cfg.predictor_path());
                            run.augmented = Some(cfg.output.join(format!("augmented_user_item.k{k}.txt")));
                            run.grid = Default::default();
                            run.train.ablation = a;
                            run.train.k_aug = k;
                            run.train.lambda1 = l1;
                            run.train.lambda2 = l2;
                            run.train.tau = ta;
                            run.train.seed = s;
                            out.push((name, run));
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn grid_run(cfg: &RunConfig, ds: &InteractionDataset) -> Result<Vec<serde_json::Value>> {
    write_metadata(cfg, "grid")?;
    let runs = grid_configs(cfg);
    log::info!("grid of {} runs", runs.len());
    let mut rows = Vec::new();
    for (name, run) in &runs {
        let summary = train_run(run, ds)?;
        let mut row = json!({
            "run": name,
            "ablation": run.train.ablation,
            "k_aug": run.train.k_aug,
            "lambda1": run.train.lambda1,
            "lambda2": run.train.lambda2,
            "tau": run.train.tau,
            "seed": run.train.seed,
            "best_epoch": summary.best_epoch,
            "valid_ndcg@20": summary.valid_ndcg_at_20,
        });
        for (split, res) in &summary.metrics {
            for &k in &res.cutoffs {
                for m in [Metric::Recall, Metric::Ndcg] {
                    row[format!("{}_{}@{k}", split_name(*split), m.name())] = json!(res.get(m, k));
                }
            }
        }
        rows.push(row);
    }
    let lines: Vec<String> = rows.iter().map(|r| r.to_string()).collect();
    write_file(&cfg.output.join("grid_summary.jsonl"), lines.join("\n") + "\n")?;
    if let Some(best) = rows
        .iter()
        .filter(|r| r["valid_ndcg@20"].is_f64())
        .max_by(|a, b| a["valid_ndcg@20"].as_f64().partial_cmp(&b["valid_ndcg@20"].as_f64()).expect("finite"))
    {
        log::info!("best by validation NDCG@20: {best}");
        write_json(&cfg.output.join("grid_best.json"), best)?;
    }
    Ok(rows)
}
