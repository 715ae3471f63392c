//! Command-line front end: run configuration, CSV/JSON data files and SVG
//! plots for solution, bifurcation and phase diagrams.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "pellet",
    version,
    about = "Bifurcation analysis of a non-isothermal catalyst pellet"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Steady branch in theta0 with the cycle branches born at its Hopf points.
    Branch(CommonArgs),
    /// Fold, Hopf and homoclinic curves in the (gamma, theta0) plane.
    Loci(CommonArgs),
    /// Cycle branches and their homoclinic end points.
    Cycles(CommonArgs),
    /// Trajectories and their fates from configured seeds.
    Simulate(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON run configuration; defaults are used for anything it omits.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of interior collocation points.
    #[arg(long)]
    pub grid_n: Option<usize>,
    /// Relative tolerance of the time integrations.
    #[arg(long)]
    pub rtol: Option<f64>,
}

impl CommonArgs {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let base = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        Ok(base.apply(&config::Overrides {
            out: self.out.clone(),
            grid_n: self.grid_n,
            rtol: self.rtol,
        }))
    }
}

type Handler = fn(&RunConfig) -> Result<(), CliError>;

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let (args, f): (&CommonArgs, Handler) = match &cli.command {
        Command::Branch(a) => (a, commands::branch),
        Command::Loci(a) => (a, commands::loci),
        Command::Cycles(a) => (a, commands::cycles),
        Command::Simulate(a) => (a, commands::simulate),
    };
    f(&args.resolve()?)
}
