//! Command-line front end: image I/O, run configuration and report files.

pub mod commands;
pub mod config;
pub mod io;
pub mod output;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "imgtransport", version, about = "Geodesics and barycenters of images under generalized optimal transport")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Discrete geodesic between two images.
    Geodesic(RunArgs),
    /// Weighted barycenter of several images.
    Barycenter(RunArgs),
    /// Benamou-Brenier trajectory with a relaxed mass constraint.
    Bb(RunArgs),
    /// Error of the discrete path energy against the continuous one, per K.
    Consistency(RunArgs),
    /// Solvers against the slow reference implementations.
    OracleCheck(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON file with any of the keys below; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: RunConfig,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let base = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        let cfg = base.merge(self.overrides.clone());
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let (args, f): (&RunArgs, fn(&RunConfig) -> Result<()>) = match &cli.command {
        Command::Geodesic(a) => (a, commands::geodesic::run),
        Command::Barycenter(a) => (a, commands::barycenter::run),
        Command::Bb(a) => (a, commands::bb::run),
        Command::Consistency(a) => (a, commands::consistency::run),
        Command::OracleCheck(a) => (a, commands::oracle::run),
    };
    let cfg = args.resolve()?;
    if let Some(n) = cfg.threads {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    f(&cfg)
}
