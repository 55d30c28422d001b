mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ebrec::dataset::Split;
use ebrec::EbrecError;

use commands::EvalRequest;
use config::{Overrides, RunConfig};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "ebrec", version, about = "Bundle recommendation training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Valid,
    Test,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Train the user-item predictor used for augmentation.
    Pretrain(Overrides),
    /// Write the augmented user-item file for the configured k_aug.
    Augment(Overrides),
    /// Train a model, then report validation and test metrics.
    Train(Overrides),
    /// Evaluate a checkpoint with full ranking.
    Eval {
        #[command(flatten)]
        overrides: Overrides,
        /// Defaults to <output>/model.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// NDCG and recall at K = 5, 10, ..., 100.
        #[arg(long)]
        curve: bool,
        /// Also write per-user rankings and metrics.
        #[arg(long)]
        per_user: bool,
    },
    /// Histogram of how much of each bundle its users' items cover.
    OverlapReport(Overrides),
    /// Train every combination of the [grid] lists.
    Grid(Overrides),
}

impl Command {
    fn overrides(&self) -> &Overrides {
        match self {
            Command::Pretrain(o)
            | Command::Augment(o)
            | Command::Train(o)
            | Command::OverlapReport(o)
            | Command::Grid(o) => o,
            Command::Eval { overrides, .. } => overrides,
        }
    }
}

fn exit_code(err: &EbrecError) -> u8 {
    match err {
        EbrecError::NonFinite { .. } => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

fn prepare(o: &Overrides) -> Result<RunConfig, (u8, String)> {
    let usage = |e: EbrecError| {
        let code = if e.is_data_error() { EXIT_DATA } else { EXIT_USAGE };
        (code, e.to_string())
    };
    let cfg = o.resolve().map_err(usage)?.materialize();
    for warning in cfg.train.validate().map_err(usage)? {
        log::warn!("{warning}");
    }
    if cfg.eval.cutoffs.is_empty() || cfg.eval.cutoffs.contains(&0) {
        return Err((EXIT_USAGE, "eval cutoffs must be non-empty and positive".into()));
    }
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| (EXIT_USAGE, format!("thread pool: {e}")))?;
    }
    std::fs::create_dir_all(&cfg.output)
        .map_err(|e| (EXIT_DATA, EbrecError::io(&cfg.output, e).to_string()))?;
    Ok(cfg)
}

fn run(command: &Command, cfg: &RunConfig) -> ebrec::Result<()> {
    let ds = commands::load(cfg)?;
    match command {
        Command::Pretrain(_) => {
            commands::pretrain(cfg, &ds)?;
        }
        Command::Augment(_) => {
            commands::augment(cfg, &ds)?;
        }
        Command::Train(_) => {
            commands::train_run(cfg, &ds)?;
        }
        Command::Eval {
            checkpoint,
            split,
            curve,
            per_user,
            ..
        } => {
            let splits = match split {
                SplitArg::Valid => vec![Split::Valid],
                SplitArg::Test => vec![Split::Test],
                SplitArg::Both => vec![Split::Valid, Split::Test],
            };
            let req = EvalRequest {
                checkpoint: checkpoint.clone(),
                splits,
                curve: *curve,
                per_user: *per_user,
            };
            commands::eval_run(cfg, &ds, &req)?;
        }
        Command::OverlapReport(_) => {
            commands::overlap_run(cfg, &ds)?;
        }
        Command::Grid(_) => {
            commands::grid_run(cfg, &ds)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let cfg = match prepare(cli.command.overrides()) {
        Ok(cfg) => cfg,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(code);
        }
    };
    match run(&cli.command, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
