//! Command-line driver: simulation study, timing, model fitting and
//! tail-dependence maps.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use vecchia_core::covariance::{make_grid, CovarianceSpec};
use vecchia_core::Location;

pub mod commands;
pub mod experiment;

#[derive(Debug, Parser)]
#[command(
    name = "vecchia",
    version,
    about = "Vecchia approximations to high-dimensional Gaussian CDFs"
)]
pub struct Cli {
    /// Master seed; commands derive all randomness from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for term- and replicate-level parallelism.
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// Output file; standard output when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a zero-mean Gaussian process on a grid.
    Simulate(commands::SimulateArgs),
    /// One Vecchia or direct QMC log-CDF evaluation.
    Cdf(commands::CdfArgs),
    /// Crossed simulation study over grids, ranges and methods.
    Simstudy(experiment::SimstudyArgs),
    /// Wall-clock timing of the Vecchia log-CDF across worker counts.
    Scaling(experiment::ScalingArgs),
    /// Censored-likelihood fit of the scale-mixture model.
    Fit(commands::FitArgs),
    /// Tail-dependence χ_u over a grid around a reference site.
    Chimap(commands::ChimapArgs),
}

/// Regular grid and exponential covariance shared by several commands.
#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    /// Sites per side of the square grid.
    #[arg(long, default_value_t = 15)]
    pub grid: usize,
    #[arg(long, default_value_t = 1.0)]
    pub spacing: f64,
    /// Range parameter ρ.
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    /// Anisotropy angle φ in radians.
    #[arg(long)]
    pub phi: Option<f64>,
    /// Anisotropy ratio A ≥ 1.
    #[arg(long)]
    pub aspect: Option<f64>,
}

impl GridArgs {
    pub fn locations(&self) -> Result<Vec<Location>> {
        anyhow::ensure!(self.grid > 0, "grid must have at least one site per side");
        anyhow::ensure!(self.spacing > 0.0, "spacing must be positive");
        Ok(make_grid(self.grid, self.spacing))
    }

    pub fn spec(&self) -> Result<CovarianceSpec> {
        Ok(match (self.phi, self.aspect) {
            (None, None) => CovarianceSpec::isotropic(self.rho)?,
            (phi, aspect) => {
                CovarianceSpec::anisotropic(self.rho, phi.unwrap_or(0.0), aspect.unwrap_or(1.0))?
            }
        })
    }
}

/// Failure raised by the CLI itself that should be reported as numerical.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct NumericalFailure(pub String);

/// 2 for numerical failures anywhere in the error chain, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err.chain().any(|e| {
        e.downcast_ref::<vecchia_core::Error>()
            .is_some_and(|c| c.is_numerical())
            || e.downcast_ref::<NumericalFailure>().is_some()
    });
    if numerical {
        2
    } else {
        1
    }
}

pub(crate) fn output(path: Option<&Path>) -> Result<Box<dyn Write + Send>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(std::io::stdout())),
    })
}

pub fn run(cli: &Cli) -> Result<()> {
    let body = || match &cli.command {
        Command::Simulate(a) => commands::simulate(cli, a),
        Command::Cdf(a) => commands::cdf(cli, a),
        Command::Simstudy(a) => experiment::simstudy(cli, a),
        Command::Scaling(a) => experiment::scaling(cli, a),
        Command::Fit(a) => commands::fit(cli, a),
        Command::Chimap(a) => commands::chimap(cli, a),
    };
    match cli.workers {
        // scaling manages its own pools
        Some(w) if !matches!(cli.command, Command::Scaling(_)) => {
            anyhow::ensure!(w > 0, "--workers must be positive");
            vecchia_core::vecchia::with_workers(w, body)?
        }
        _ => body(),
    }
}
