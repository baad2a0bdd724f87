//! Command line front end: orchestrates end-to-end experiments from a single
//! configuration file and persists every artifact, report, and manifest.
//!
//! Exit codes: 0 success, 2 config/validation error, 3 numerical failure,
//! 4 missing artifact.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

mod commands;
mod config;
mod manifest;

use config::Config;
use fredlab::error::{Error, Result};

#[derive(Parser)]
#[command(
    name = "fredlab",
    about = "Desk-scale laboratory for data-free backdoor removal",
    version
)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the subcommand's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Artifact directory (defaults to $FREDLAB_CACHE, then ./artifacts).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic desk datasets (train/test/aux).
    MakeData,
    /// Poison a dataset with the configured trigger.
    Poison,
    /// Train the victim classifier.
    Train,
    /// Train the generative prior on auxiliary data.
    TrainGan,
    /// Synthesize a base set (method = naive | gmi | fred).
    Invert,
    /// Run the unlearning defense
    /// (base = clean | ood | naive | gmi | fred | booster).
    Defend,
    /// Stability analyses, detector probes, and latent probes.
    Diagnose,
    /// Discrete equilibrium audit on a file-defined instance.
    AuditEq,
    /// Evaluate a classifier checkpoint on a dataset.
    Evaluate {
        #[arg(long)]
        classifier: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Also compute the attack success rate for this target class.
        #[arg(long)]
        target_class: Option<usize>,
    },
}

fn run(cli: &Cli) -> Result<()> {
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let config = Config::load(config_path)?;
    let config_bytes = std::fs::read(config_path).map_err(|e| Error::io(config_path, e))?;
    let out_dir = cli
        .out
        .clone()
        .or_else(|| config.out_dir.clone())
        .or_else(|| std::env::var_os("FREDLAB_CACHE").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("artifacts"));
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;

    let ctx = commands::Ctx {
        config,
        config_bytes,
        out_dir,
        seed_override: cli.seed,
    };
    match &cli.command {
        Command::MakeData => commands::cmd_make_data(&ctx),
        Command::Poison => commands::cmd_poison(&ctx),
        Command::Train => commands::cmd_train(&ctx),
        Command::TrainGan => commands::cmd_train_gan(&ctx),
        Command::Invert => commands::cmd_invert(&ctx),
        Command::Defend => commands::cmd_defend(&ctx),
        Command::Diagnose => commands::cmd_diagnose(&ctx),
        Command::AuditEq => commands::cmd_audit_eq(&ctx),
        Command::Evaluate {
            classifier,
            dataset,
            target_class,
        } => commands::cmd_evaluate(&ctx, classifier, dataset, *target_class),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
