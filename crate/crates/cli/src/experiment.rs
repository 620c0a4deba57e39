//! `simstudy` and `scaling`.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use vecchia_core::covariance::{build_covariance, make_grid, CovarianceSpec};
use vecchia_core::mvn::{is_prime, qmc_mvn_cdf, simulate_gp, LogProbEstimate, QmcConfig};
use vecchia_core::vecchia::{build_plan, vecchia_log_cdf, with_workers};
use vecchia_core::NeighborStrategy;

use crate::commands::SCHEMA_VERSION;
use crate::{output, Cli, NumericalFailure};

/// Crossed design of the simulation study. Scenarios are grid size ×
/// range; methods are Vecchia for every `(m, p, strategy)` and direct QMC
/// for every lattice size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub schema_version: u32,
    pub grid_sizes: Vec<usize>,
    pub ranges: Vec<f64>,
    #[serde(default)]
    pub m_values: Vec<usize>,
    #[serde(default = "default_p")]
    pub p_values: Vec<usize>,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<NeighborStrategy>,
    #[serde(default)]
    pub qmc_sizes: Vec<usize>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub workers: Option<usize>,
    /// Lattice size for the Vecchia terms.
    #[serde(default = "default_vecchia_points")]
    pub vecchia_n_points: usize,
    #[serde(default = "default_shifts")]
    pub n_shifts: usize,
    #[serde(default = "default_spacing")]
    pub spacing: f64,
}

fn default_p() -> Vec<usize> {
    vec![1]
}
fn default_strategies() -> Vec<NeighborStrategy> {
    vec![NeighborStrategy::NearestPerElement]
}
fn default_replications() -> usize {
    5
}
fn default_vecchia_points() -> usize {
    499
}
fn default_shifts() -> usize {
    10
}
fn default_spacing() -> f64 {
    1.0
}

impl Default for ExperimentSpec {
    /// The full study: five grids, two ranges, four neighbour counts and
    /// two lattice sizes.
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            grid_sizes: vec![15, 30, 50, 75, 100],
            ranges: vec![1.0, 5.0],
            m_values: vec![5, 10, 30, 50],
            p_values: default_p(),
            strategies: default_strategies(),
            qmc_sizes: vec![499, 3607],
            replications: default_replications(),
            seed: 0,
            workers: None,
            vecchia_n_points: default_vecchia_points(),
            n_shifts: default_shifts(),
            spacing: default_spacing(),
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            bail!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            );
        }
        if self.grid_sizes.is_empty() || self.ranges.is_empty() {
            bail!("grid_sizes and ranges must be nonempty");
        }
        if self.m_values.is_empty() && self.qmc_sizes.is_empty() {
            bail!("at least one method is needed: give m_values or qmc_sizes");
        }
        if !self.m_values.is_empty() && (self.p_values.is_empty() || self.strategies.is_empty()) {
            bail!("p_values and strategies must be nonempty when m_values is");
        }
        if self.grid_sizes.contains(&0) || self.m_values.contains(&0) || self.p_values.contains(&0)
        {
            bail!("grid sizes, m and p must be positive");
        }
        if let Some(r) = self.ranges.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
            bail!("range {r} is not positive");
        }
        if let Some(n) = self
            .qmc_sizes
            .iter()
            .chain([&self.vecchia_n_points])
            .find(|n| !is_prime(**n))
        {
            bail!("lattice size {n} is not prime");
        }
        if self.replications == 0 || self.n_shifts < 2 {
            bail!("need at least one replication and two shifts");
        }
        if !(self.spacing > 0.0) {
            bail!("spacing must be positive");
        }
        Ok(())
    }

    pub fn methods(&self) -> Vec<MethodSpec> {
        let mut out = Vec::new();
        for &m in &self.m_values {
            for &p in &self.p_values {
                for &strategy in &self.strategies {
                    out.push(MethodSpec::Vecchia { m, p, strategy });
                }
            }
        }
        out.extend(
            self.qmc_sizes
                .iter()
                .map(|&n| MethodSpec::Qmc { n_points: n }),
        );
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MethodSpec {
    Vecchia {
        m: usize,
        p: usize,
        strategy: NeighborStrategy,
    },
    Qmc {
        n_points: usize,
    },
}

/// One measurement in long form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub grid_size: usize,
    pub n_sites: usize,
    pub range: f64,
    pub method: String,
    pub m: Option<usize>,
    pub p: Option<usize>,
    pub strategy: Option<String>,
    pub n_points: usize,
    pub n_shifts: usize,
    pub replication: usize,
    pub log_cdf: Option<f64>,
    pub std_error: Option<f64>,
    pub wall_time_seconds: f64,
    pub plan_time_seconds: f64,
    pub workers: usize,
    pub error: Option<String>,
}

/// Lattice seed of replication `r`.
pub fn replication_seed(seed: u64, r: usize) -> u64 {
    seed.wrapping_add(1 + r as u64)
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed().as_secs_f64())
}

/// Runs the crossed design; failing cells become rows with an error tag.
pub fn run_study(
    spec: &ExperimentSpec,
    mut sink: impl FnMut(&ResultRow) -> Result<()>,
) -> Result<usize> {
    spec.validate()?;
    let workers = spec.workers.unwrap_or_else(rayon::current_num_threads);
    let methods = spec.methods();
    let mut rows = 0;
    for &n_side in &spec.grid_sizes {
        let locs = make_grid(n_side, spec.spacing);
        for &range in &spec.ranges {
            let cov = CovarianceSpec::isotropic(range)?;
            let upper = simulate_gp(&locs, &cov, spec.seed);
            for method in &methods {
                // plans do not depend on the replication
                let (plan, plan_time) = match (method, &upper) {
                    (MethodSpec::Vecchia { m, p, strategy }, Ok(_)) => {
                        let (plan, t) =
                            timed(|| build_plan(&locs, &cov, *m, *p, *strategy, spec.seed));
                        (Some(plan), t)
                    }
                    _ => (None, 0.0),
                };
                let dense = match (method, &upper) {
                    (MethodSpec::Qmc { .. }, Ok(_)) => Some(build_covariance(&locs, &cov)),
                    _ => None,
                };
                for r in 0..spec.replications {
                    let seed = replication_seed(spec.seed, r);
                    let (m, p, strategy, n_points) = match *method {
                        MethodSpec::Vecchia { m, p, strategy } => (
                            Some(m),
                            Some(p),
                            Some(strategy.to_string()),
                            spec.vecchia_n_points,
                        ),
                        MethodSpec::Qmc { n_points } => (None, None, None, n_points),
                    };
                    let cfg = QmcConfig::new(n_points, spec.n_shifts, seed)?;
                    let (est, wall): (vecchia_core::Result<LogProbEstimate>, f64) =
                        match (&upper, &plan, &dense) {
                            (Err(e), _, _) => (
                                Err(vecchia_core::Error::InvalidParameter(e.to_string())),
                                0.0,
                            ),
                            (Ok(_), Some(Err(e)), _) => (
                                Err(vecchia_core::Error::InvalidParameter(e.to_string())),
                                0.0,
                            ),
                            (Ok(b), Some(Ok(plan)), _) => {
                                timed(|| vecchia_log_cdf(b, &locs, &cov, plan, &cfg))
                            }
                            (Ok(b), None, Some(sigma)) => timed(|| qmc_mvn_cdf(b, sigma, &cfg)),
                            (Ok(_), None, None) => {
                                unreachable!("every method has a plan or a matrix")
                            }
                        };
                    if let Err(e) = &est {
                        log::warn!(
                            "grid {n_side}, range {range}, {method:?}, replication {r}: {e}"
                        );
                    }
                    let row = ResultRow {
                        grid_size: n_side,
                        n_sites: locs.len(),
                        range,
                        method: if m.is_some() { "vecchia" } else { "qmc" }.to_string(),
                        m,
                        p,
                        strategy,
                        n_points,
                        n_shifts: spec.n_shifts,
                        replication: r,
                        log_cdf: est.as_ref().ok().map(|e| e.log_value),
                        std_error: est.as_ref().ok().map(|e| e.std_error),
                        wall_time_seconds: wall,
                        plan_time_seconds: plan_time,
                        workers,
                        error: est.err().map(|e| e.to_string()),
                    };
                    sink(&row)?;
                    rows += 1;
                }
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Args)]
pub struct SimstudyArgs {
    /// ExperimentSpec JSON; the full default study when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Print the default spec as JSON and exit.
    #[arg(long)]
    pub print_default: bool,
}

pub fn read_spec(path: &std::path::Path) -> Result<ExperimentSpec> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let spec: ExperimentSpec = serde_json::from_str(&text)
        .with_context(|| format!("invalid experiment spec {}", path.display()))?;
    spec.validate()
        .with_context(|| format!("invalid experiment spec {}", path.display()))?;
    Ok(spec)
}

pub fn simstudy(cli: &Cli, args: &SimstudyArgs) -> Result<()> {
    if args.print_default {
        let mut out = output(cli.out.as_deref())?;
        serde_json::to_writer_pretty(&mut out, &ExperimentSpec::default())?;
        writeln!(out)?;
        return Ok(out.flush()?);
    }
    let mut spec = match &args.spec {
        Some(p) => read_spec(p)?,
        None => ExperimentSpec::default(),
    };
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    if cli.workers.is_some() {
        spec.workers = cli.workers;
    }
    let mut w = csv::Writer::from_writer(output(cli.out.as_deref())?);
    let mut run = || {
        run_study(&spec, |row| {
            w.serialize(row)?;
            w.flush()?;
            Ok(())
        })
    };
    let rows = match (spec.workers, cli.workers) {
        // an explicit spec worker count not already installed by `run`
        (Some(n), None) => with_workers(n, run)??,
        _ => run()?,
    };
    log::info!("{rows} rows written");
    Ok(())
}

#[derive(Debug, Args)]
pub struct ScalingArgs {
    #[arg(long, default_value_t = 50)]
    pub grid: usize,
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    #[arg(long, default_value_t = 10)]
    pub m: usize,
    /// Comma-separated worker counts; the first is the baseline.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    pub worker_counts: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, default_value_t = 499)]
    pub n_points: usize,
    #[arg(long, default_value_t = 10)]
    pub n_shifts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub grid_size: usize,
    pub n_sites: usize,
    pub m: usize,
    pub workers: usize,
    pub repeat: usize,
    pub log_cdf: f64,
    pub std_error: f64,
    pub wall_time_seconds: f64,
    pub plan_time_seconds: f64,
    pub identical_to_baseline: bool,
    /// More workers than the hardware offers.
    pub oversubscribed: bool,
}

/// Times the Vecchia log-CDF at each worker count. Errors after writing
/// all rows if any result differs from the first one.
pub fn run_scaling(
    args: &ScalingArgs,
    seed: u64,
    mut sink: impl FnMut(&ScalingRow) -> Result<()>,
) -> Result<()> {
    anyhow::ensure!(!args.worker_counts.is_empty(), "no worker counts given");
    anyhow::ensure!(
        args.worker_counts.iter().all(|&w| w > 0),
        "worker counts must be positive"
    );
    anyhow::ensure!(
        args.repeats > 0 && args.grid > 0,
        "need a nonempty grid and at least one repeat"
    );
    let hardware = std::thread::available_parallelism().map_or(1, |n| n.get());
    let locs = make_grid(args.grid, 1.0);
    let cov = CovarianceSpec::isotropic(args.rho)?;
    let upper = simulate_gp(&locs, &cov, seed)?;
    let (plan, plan_time) = timed(|| {
        build_plan(
            &locs,
            &cov,
            args.m,
            1,
            NeighborStrategy::NearestPerElement,
            seed,
        )
    });
    let plan = plan?;
    let cfg = QmcConfig::new(args.n_points, args.n_shifts, seed)?;
    let mut baseline: Option<LogProbEstimate> = None;
    let mut mismatches = 0;
    for &workers in &args.worker_counts {
        if workers > hardware {
            log::warn!(
                "{workers} workers requested but only {hardware} hardware threads are available"
            );
        }
        for repeat in 0..args.repeats {
            let (est, wall) = with_workers(workers, || {
                timed(|| vecchia_log_cdf(&upper, &locs, &cov, &plan, &cfg))
            })?;
            let est = est?;
            let base = *baseline.get_or_insert(est);
            let identical = base.log_value.to_bits() == est.log_value.to_bits()
                && base.std_error.to_bits() == est.std_error.to_bits();
            mismatches += usize::from(!identical);
            sink(&ScalingRow {
                grid_size: args.grid,
                n_sites: locs.len(),
                m: args.m,
                workers,
                repeat,
                log_cdf: est.log_value,
                std_error: est.std_error,
                wall_time_seconds: wall,
                plan_time_seconds: plan_time,
                identical_to_baseline: identical,
                oversubscribed: workers > hardware,
            })?;
        }
    }
    if mismatches > 0 {
        return Err(
            NumericalFailure(format!("{mismatches} runs differ from the baseline result")).into(),
        );
    }
    Ok(())
}

pub fn scaling(cli: &Cli, args: &ScalingArgs) -> Result<()> {
    let mut w = csv::Writer::from_writer(output(cli.out.as_deref())?);
    run_scaling(args, cli.seed.unwrap_or(0), |row| {
        w.serialize(row)?;
        w.flush()?;
        Ok(())
    })
}
