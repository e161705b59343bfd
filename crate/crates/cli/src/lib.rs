//! Command-line pipeline: synth, featurize, select, train, eval, sa, report.

pub mod config;
pub mod error;
pub mod manifest;
pub mod stages;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use pfsa_core::dataset::Terrain;
use pfsa_core::models::ModelKind;

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};
use crate::stages::Context;

#[derive(Debug, Parser)]
#[command(
    name = "pfsa",
    version,
    about = "Per-quantile sensitivity analysis of probabilistic wind power forecasters"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub args: CommonArgs,
}

#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output root; overrides `paths.out_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Master seed; overrides `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker thread cap. Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Restrict to one scenario (NCT, CT or OS).
    #[arg(long, global = true, value_parser = parse_terrain)]
    pub scenario: Option<Terrain>,
    /// Restrict to one model (gbrt, svr, mqnn or all).
    #[arg(long, global = true, value_parser = parse_model)]
    pub model: Option<ModelChoice>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelChoice {
    All,
    One(ModelKind),
}

fn parse_terrain(s: &str) -> Result<Terrain, String> {
    s.parse()
}

fn parse_model(s: &str) -> Result<ModelChoice, String> {
    if s.eq_ignore_ascii_case("all") {
        Ok(ModelChoice::All)
    } else {
        s.parse().map(ModelChoice::One)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate synthetic parks.
    Synth,
    /// Split, normalise and build feature matrices.
    Featurize,
    /// Rank features and run forward selection.
    Select,
    /// Train the quantile models.
    Train,
    /// Score test data with CRPS.
    Eval,
    /// Per-quantile Sobol indices.
    Sa,
    /// Aggregate tables and curves.
    Report,
    /// Run every stage in order.
    Pipeline,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Featurize => "featurize",
            Command::Select => "select",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Sa => "sa",
            Command::Report => "report",
            Command::Pipeline => "pipeline",
        }
    }
}

/// Build the stage context from parsed arguments.
pub fn context(args: &CommonArgs) -> CliResult<Context> {
    let path = args
        .config
        .as_ref()
        .ok_or_else(|| CliError::config("--config", "a config file is required"))?;
    let (mut cfg, bytes) = PipelineConfig::load(path)?;
    if let Some(out) = &args.out {
        cfg.paths.out_dir = out.clone();
    }
    if args.threads == Some(0) {
        return Err(CliError::config("--threads", "must be at least 1"));
    }
    let seed = args.seed.unwrap_or(cfg.seed);
    Ok(Context {
        config_sha256: manifest::sha256_hex(&bytes),
        out: cfg.paths.out_dir.clone(),
        seed,
        scenario: args.scenario,
        model: match args.model {
            None | Some(ModelChoice::All) => None,
            Some(ModelChoice::One(k)) => Some(k),
        },
        cfg,
    })
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let ctx = context(&cli.args)?;
    if let Some(n) = cli.args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            log::warn!("thread pool already initialised: {e}");
        }
    }
    match cli.command {
        Command::Pipeline => stages::pipeline(&ctx),
        c => stages::run_stage(&ctx, c.name()),
    }
}
