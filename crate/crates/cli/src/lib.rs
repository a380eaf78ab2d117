//! Experiment harness behind the `pacgen` binary.
//!
//! Each subcommand reads a [`RunConfig`], writes its outputs plus a
//! `config.resolved.toml` snapshot into the output directory, and is
//! byte-for-byte reproducible from that snapshot.

pub mod audit;
pub mod config;
pub mod landscape;
pub mod sweep;
pub mod train;

use std::fs::File;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;

/// Exit status for configuration problems.
pub const EXIT_CONFIG: i32 = 2;
/// Exit status for failures while running.
pub const EXIT_RUN: i32 = 3;

#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Run(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Run(_) => EXIT_RUN,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "config error: {e:#}"),
            Failure::Run(e) => write!(f, "run failed: {e:#}"),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "pacgen", version, about = "PAC-Bayes sharpness experiments")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration; defaults apply to anything left out.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scan the toy model's loss, pacGen and bound over a 2-D grid.
    Landscape,
    /// Train one run per (axis value, seed) and correlate pacGen with the gap.
    Sweep,
    /// Evaluate every bound variant at saved weights.
    Audit {
        /// PGO1 checkpoint or PGW1 parameter file.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train, optionally next to an unperturbed baseline.
    Train {
        /// Continue from a PGO1 checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
}

/// Load the config and apply command-line overrides.
pub fn resolve_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::from_file(p).map_err(Failure::Config)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if common.jobs == Some(0) {
        return Err(Failure::Config(anyhow::anyhow!("--jobs must be at least 1")));
    }
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = resolve_config(&cli.common)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.common.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Failure::Run(e.into()))?;
    pool.install(|| dispatch(&cfg, &cli.command, &cli.common.out))
}

fn dispatch(cfg: &RunConfig, command: &Command, out: &Path) -> Result<(), Failure> {
    match command {
        Command::Landscape => cmd_landscape(cfg, out).map(|_| ()),
        Command::Sweep => {
            let outcome = cmd_sweep(cfg, out)?;
            match outcome.failures() {
                0 => Ok(()),
                k => Err(Failure::Run(anyhow::anyhow!(
                    "{k} of {} sweep runs failed; see summary.csv",
                    outcome.runs.len()
                ))),
            }
        }
        Command::Audit { checkpoint } => cmd_audit(cfg, checkpoint.as_deref(), out).map(|_| ()),
        Command::Train { resume } => cmd_train(cfg, resume.as_deref(), out).map(|_| ()),
    }
}

fn run_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Run(e.into())
}

/// Writes `landscape.csv` (`w1,w2,loss,pacgen,bound`) and `minima.csv`.
pub fn cmd_landscape(
    cfg: &RunConfig,
    out: &Path,
) -> Result<(landscape::Landscape, Vec<landscape::Minimum>), Failure> {
    let model = cfg.build_model(true).map_err(Failure::Config)?;
    if !model.is_toy() {
        return Err(Failure::Config(anyhow::anyhow!(
            "landscape needs the two-parameter toy model"
        )));
    }
    let (train, _) = cfg.build_data().map_err(run_err)?;
    cfg.write_snapshot(out).map_err(run_err)?;
    let eval = landscape::PointEval::new(&model, &train, &cfg.pacbayes, &cfg.metrics, cfg.seed)
        .map_err(Failure::Config)?;
    let land = landscape::scan(&eval, cfg.landscape.range, cfg.landscape.resolution).map_err(run_err)?;
    let minima = landscape::find_minima(&eval, &land).map_err(run_err)?;
    let write = || -> anyhow::Result<()> {
        land.write_csv(File::create(out.join("landscape.csv"))?)?;
        landscape::write_minima_csv(File::create(out.join("minima.csv"))?, &minima)
    };
    write().map_err(run_err)?;
    Ok((land, minima))
}

pub fn cmd_sweep(cfg: &RunConfig, out: &Path) -> Result<sweep::SweepOutcome, Failure> {
    let model = cfg.build_model(false).map_err(Failure::Config)?;
    let (train, test) = cfg.build_data().map_err(run_err)?;
    sweep::run_sweep(cfg, &model, &train, &test, out).map_err(run_err)
}

/// Writes `audit.json`.
pub fn cmd_audit(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    out: &Path,
) -> Result<audit::AuditReport, Failure> {
    let path = checkpoint
        .map(Path::to_path_buf)
        .or_else(|| cfg.audit.checkpoint.clone())
        .ok_or_else(|| Failure::Config(anyhow::anyhow!("audit needs --checkpoint or audit.checkpoint")))?;
    let model = cfg.build_model(false).map_err(Failure::Config)?;
    let (train, _) = cfg.build_data().map_err(run_err)?;
    let w = audit::load_weights(&path).map_err(run_err)?;
    let grid = cfg.audit.eta_grid.then_some(cfg.audit.max_j);
    let report = audit::audit(&model, &w, &train, &cfg.pacbayes, cfg.audit.mc_samples, grid, cfg.seed)
        .map_err(run_err)?;
    let write = || -> anyhow::Result<()> {
        cfg.write_snapshot(out)?;
        let text = serde_json::to_string_pretty(&report)?;
        std::fs::write(out.join("audit.json"), text + "\n")?;
        Ok(())
    };
    write().map_err(run_err)?;
    Ok(report)
}

pub fn cmd_train(
    cfg: &RunConfig,
    resume: Option<&Path>,
    out: &Path,
) -> Result<Vec<train::RunArtifacts>, Failure> {
    let model = cfg.build_model(false).map_err(Failure::Config)?;
    let (train_set, test_set) = cfg.build_data().map_err(run_err)?;
    train::run_train(cfg, &model, &train_set, &test_set, out, resume).map_err(run_err)
}
