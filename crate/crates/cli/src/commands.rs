//! `simulate`, `cdf`, `fit` and `chimap`.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use vecchia_core::covariance::{build_covariance, CovarianceSpec};
use vecchia_core::inference::{fit as fit_model, CensoredDataset, FitConfig, FitResult};
use vecchia_core::io::{read_field, read_observations, read_stations, write_field};
use vecchia_core::mvn::{qmc_mvn_cdf, simulate_gp, QmcConfig};
use vecchia_core::scalemix::{
    chi_u_with, marginal_quantile_with, MixtureParams, QuadratureConfig, RadialRule,
};
use vecchia_core::vecchia::{build_plan, vecchia_log_cdf};
use vecchia_core::{Location, NeighborStrategy};

use crate::{output, Cli, GridArgs};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub grid: GridArgs,
}

/// Writes `station_id,x,y,value` for one draw of the process.
pub fn simulate(cli: &Cli, args: &SimulateArgs) -> Result<()> {
    let locs = args.grid.locations()?;
    let values = simulate_gp(&locs, &args.grid.spec()?, cli.seed.unwrap_or(0))?;
    let mut out = output(cli.out.as_deref())?;
    write_field(&mut out, &locs, &values)?;
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Vecchia,
    Qmc,
}

#[derive(Debug, Args)]
pub struct CdfArgs {
    #[command(flatten)]
    pub grid: GridArgs,
    /// Field CSV whose values are the upper bounds; a draw of the process
    /// from the master seed when omitted.
    #[arg(long)]
    pub bound: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Method::Vecchia)]
    pub method: Method,
    #[arg(long, default_value_t = 30)]
    pub m: usize,
    #[arg(long, default_value_t = 1)]
    pub p: usize,
    #[arg(long, default_value = "nearest")]
    pub strategy: NeighborStrategy,
    #[arg(long, default_value_t = 499)]
    pub n_points: usize,
    #[arg(long, default_value_t = 10)]
    pub n_shifts: usize,
    /// Seed of the lattice shifts; the master seed when omitted.
    #[arg(long)]
    pub qmc_seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CdfOutput {
    pub method: String,
    pub n_sites: usize,
    pub log_cdf: f64,
    pub std_error: f64,
    pub n_points_used: usize,
    pub plan_time_seconds: f64,
    pub wall_time_seconds: f64,
}

pub fn cdf(cli: &Cli, args: &CdfArgs) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    let spec = args.grid.spec()?;
    let (locs, upper) = match &args.bound {
        Some(path) => read_field(path)?,
        None => {
            let locs = args.grid.locations()?;
            let upper = simulate_gp(&locs, &spec, seed)?;
            (locs, upper)
        }
    };
    let cfg = QmcConfig::new(args.n_points, args.n_shifts, args.qmc_seed.unwrap_or(seed))?;
    let (est, plan_time, wall) = match args.method {
        Method::Vecchia => {
            let t = Instant::now();
            let plan = build_plan(&locs, &spec, args.m, args.p, args.strategy, seed)?;
            let plan_time = t.elapsed().as_secs_f64();
            let t = Instant::now();
            let est = vecchia_log_cdf(&upper, &locs, &spec, &plan, &cfg)?;
            (est, plan_time, t.elapsed().as_secs_f64())
        }
        Method::Qmc => {
            let t = Instant::now();
            let est = qmc_mvn_cdf(&upper, &build_covariance(&locs, &spec), &cfg)?;
            (est, 0.0, t.elapsed().as_secs_f64())
        }
    };
    let result = CdfOutput {
        method: format!("{:?}", args.method).to_lowercase(),
        n_sites: locs.len(),
        log_cdf: est.log_value,
        std_error: est.std_error,
        n_points_used: est.n_points_used,
        plan_time_seconds: plan_time,
        wall_time_seconds: wall,
    };
    let mut out = output(cli.out.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &result)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// CSV with header `station_id,x,y`.
    #[arg(long)]
    pub stations: PathBuf,
    /// CSV with header `time,<station ids>`; empty cells are missing.
    #[arg(long)]
    pub observations: PathBuf,
    /// FitConfig JSON with a `schema_version` field; defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfigFile {
    pub schema_version: u32,
    #[serde(flatten)]
    pub config: FitConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOutput {
    pub schema_version: u32,
    pub stations: Vec<String>,
    pub dropped_stations: Vec<String>,
    pub result: FitResult,
}

pub fn read_fit_config(path: &std::path::Path) -> Result<FitConfig> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let file: FitConfigFile = serde_json::from_str(&text)
        .with_context(|| format!("invalid fit config {}", path.display()))?;
    if file.schema_version != SCHEMA_VERSION {
        bail!(
            "{}: schema_version {} is not supported (expected {SCHEMA_VERSION})",
            path.display(),
            file.schema_version
        );
    }
    Ok(file.config)
}

pub fn fit(cli: &Cli, args: &FitArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => read_fit_config(p)?,
        None => FitConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let stations = read_stations(&args.stations)?;
    let mut obs = read_observations(&args.observations)?;
    log::info!(
        "{} times, {} stations, {:.1}% missing",
        obs.times.len(),
        obs.station_ids.len(),
        100.0 * obs.missing_fraction()
    );
    let dropped = obs.drop_empty_stations();
    if !dropped.is_empty() {
        log::warn!(
            "dropping {} stations without observations: {}",
            dropped.len(),
            dropped.join(", ")
        );
    }
    anyhow::ensure!(
        !obs.station_ids.is_empty(),
        "no station has any observation"
    );
    let locs: Vec<Location> = obs
        .station_ids
        .iter()
        .enumerate()
        .map(|(c, id)| {
            stations
                .iter()
                .find(|s| &s.id == id)
                .map(|s| s.location)
                .ok_or_else(|| vecchia_core::Error::Schema {
                    path: args.observations.display().to_string(),
                    row: 1,
                    column: c + 2,
                    message: format!("station '{id}' is not in {}", args.stations.display()),
                })
        })
        .collect::<vecchia_core::Result<_>>()?;
    let data = CensoredDataset::from_raw(locs, &obs.values, cfg.threshold)?;
    let result = fit_model(&data, &cfg)?;
    log::info!(
        "psi_hat = {:?}, loglik = {:.4}, converged = {}",
        result.psi_hat,
        result.loglik,
        result.converged
    );
    let out_doc = FitOutput {
        schema_version: SCHEMA_VERSION,
        stations: obs.station_ids,
        dropped_stations: dropped,
        result,
    };
    let mut out = output(cli.out.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &out_doc)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct ChimapArgs {
    /// Output of `fit` (or a bare FitResult) supplying ψ.
    #[arg(long, conflicts_with_all = ["beta", "rho", "phi", "aspect"])]
    pub fit: Option<PathBuf>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub phi: Option<f64>,
    #[arg(long)]
    pub aspect: Option<f64>,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub ref_x: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub ref_y: f64,
    #[arg(long, default_value_t = 0.95)]
    pub u: f64,
    /// Half-width of the square window around the reference site.
    #[arg(long, default_value_t = 3.0)]
    pub extent: f64,
    /// Grid points per side (odd keeps the reference site on the grid).
    #[arg(long, default_value_t = 41)]
    pub n: usize,
    #[arg(long, default_value_t = 100)]
    pub nodes: usize,
    #[arg(long, default_value_t = 101)]
    pub n_points: usize,
    #[arg(long, default_value_t = 4)]
    pub n_shifts: usize,
}

fn params_from_fit(path: &std::path::Path) -> Result<MixtureParams> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let result = value.get("result").unwrap_or(&value);
    let psi = result
        .get("psi_hat")
        .with_context(|| format!("{} has no psi_hat", path.display()))?;
    Ok(serde_json::from_value(psi.clone())?)
}

pub fn chimap(cli: &Cli, args: &ChimapArgs) -> Result<()> {
    if !(args.u > 0.0 && args.u < 1.0) {
        bail!("--u must lie in (0, 1), got {}", args.u);
    }
    anyhow::ensure!(
        args.n >= 1 && args.extent > 0.0,
        "need n >= 1 and a positive extent"
    );
    let params = match &args.fit {
        Some(path) => params_from_fit(path)?,
        None => {
            let beta = args.beta.context("--beta is required without --fit")?;
            let rho = args.rho.context("--rho is required without --fit")?;
            let cov = match (args.phi, args.aspect) {
                (None, None) => CovarianceSpec::isotropic(rho)?,
                (phi, aspect) => {
                    CovarianceSpec::anisotropic(rho, phi.unwrap_or(0.0), aspect.unwrap_or(1.0))?
                }
            };
            MixtureParams::new(beta, args.gamma, cov)?
        }
    };
    params.validate()?;
    let quad = QuadratureConfig::new(args.nodes)?;
    let qmc = QmcConfig::new(args.n_points, args.n_shifts, cli.seed.unwrap_or(0))?;
    let rule = RadialRule::new(&params, &quad)?;
    let q = marginal_quantile_with(args.u, &rule)?;
    let reference = Location::new(args.ref_x, args.ref_y);
    let coord = |k: usize| {
        if args.n == 1 {
            0.0
        } else {
            args.extent * (2.0 * k as f64 - (args.n - 1) as f64) / (args.n - 1) as f64
        }
    };
    let mut w = csv::Writer::from_writer(output(cli.out.as_deref())?);
    w.write_record(["x", "y", "chi"])?;
    for i in 0..args.n {
        for j in 0..args.n {
            let site = Location::new(args.ref_x + coord(j), args.ref_y + coord(i));
            let chi = chi_u_with(
                params.cov.covariance(&reference, &site),
                args.u,
                q,
                &rule,
                &qmc,
            )?;
            w.write_record([site.x.to_string(), site.y.to_string(), chi.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
