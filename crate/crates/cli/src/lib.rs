pub mod commands;
pub mod config;
pub mod error;
pub mod workdir;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::Context;
use crate::config::{RunConfig, Solution};
use crate::error::CliError;
use crate::workdir::{Manifest, Workdir};

#[derive(Debug, Parser)]
#[command(name = "txnet", version, about = "Synthetic transaction graphs, temporal embeddings and laundering-case classifiers")]
pub struct Cli {
    /// TOML run configuration (partial files merge over the defaults).
    #[arg(long, global = true, env = "TXNET_CONFIG")]
    pub config: Option<PathBuf>,
    /// Directory holding data, artifacts, scores, reports and manifests.
    #[arg(long, global = true, env = "TXNET_WORKDIR", default_value = ".")]
    pub workdir: PathBuf,
    /// Replicate seed overriding every data and model seed.
    #[arg(long, global = true, env = "TXNET_SEED")]
    pub seed: Option<u64>,
    /// Engine and architecture: baseline-c1c2, baseline-c3, proposed-c1c2 or proposed-c3.
    #[arg(long, global = true, env = "TXNET_SOLUTION")]
    pub solution: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Generate synthetic transactions, attributes, ground truth and case labels.
    Generate,
    /// Build weekly graph snapshots from the transaction file.
    Graph,
    /// Train per-snapshot embeddings and assemble account feature rows.
    Embed,
    /// Fit the classifier chain and score the held-out folds.
    Train,
    /// Compute test-fold metrics, curves and the auto-close report.
    Eval,
    /// Build the auto-open list of unflagged accounts.
    Rank,
    /// Run every stage in order.
    Pipeline,
    /// Print the resolved configuration as TOML.
    ShowConfig,
}

/// Loads the config file (if any) and applies the flag overrides.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = Some(s);
    }
    if let Some(s) = &cli.solution {
        cfg.apply_solution(s.parse::<Solution>()?);
    }
    cfg.resolve_seeds();
    cfg.validate()?;
    Ok(cfg)
}

/// Runs one command; `ShowConfig` prints and returns no manifest.
pub fn run(cli: &Cli) -> Result<Option<Manifest>, CliError> {
    let cfg = resolve_config(cli)?;
    if let Command::ShowConfig = cli.command {
        print!("{}", cfg.to_toml());
        return Ok(None);
    }
    let wd = Workdir::new(&cli.workdir)?;
    let _lock = wd.lock()?;
    let ctx = Context::new(cfg, wd);
    let m = match cli.command {
        Command::Generate => commands::cmd_generate(&ctx)?,
        Command::Graph => commands::cmd_graph(&ctx)?,
        Command::Embed => commands::cmd_embed(&ctx)?,
        Command::Train => commands::cmd_train(&ctx)?,
        Command::Eval => commands::cmd_eval(&ctx)?,
        Command::Rank => commands::cmd_rank(&ctx)?,
        Command::Pipeline => commands::cmd_pipeline(&ctx)?,
        Command::ShowConfig => unreachable!(),
    };
    Ok(Some(m))
}
