//! Evaluation of the Vecchia log-CDF and log-PDF for a fixed plan.
//!
//! Each block contributes `log Φ(b_{block ∪ N}) − log Φ(b_N)`. Terms are
//! independent, so they are evaluated in parallel and summed in block order.
//! Every term draws its lattice shifts from a seed derived only from the
//! master seed, the block id and a numerator/denominator tag, so the result
//! does not depend on how terms are scheduled.

use std::ops::Range;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::plan::CondSetPlan;
use crate::covariance::{CovarianceSpec, Location};
use crate::error::{Error, Result};
use crate::mvn::{
    conditional_gaussian, CholeskyFactor, LogProbEstimate, PreparedMvn, QmcConfig, LN_SQRT_2PI,
};

/// Anything that can hand out covariance entries by index.
pub trait CovarianceSource: Sync {
    fn dim(&self) -> usize;

    fn entry(&self, i: usize, j: usize) -> f64;

    fn submatrix(&self, idx: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(idx.len(), idx.len(), |a, b| self.entry(idx[a], idx[b]))
    }
}

impl CovarianceSource for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        self[(i, j)]
    }
}

/// Exponential covariance of a set of sites, evaluated on demand so that
/// the full `D × D` matrix is never formed.
#[derive(Debug, Clone, Copy)]
pub struct SpatialCovariance<'a> {
    pub locs: &'a [Location],
    pub spec: CovarianceSpec,
}

impl<'a> SpatialCovariance<'a> {
    pub fn new(locs: &'a [Location], spec: CovarianceSpec) -> Self {
        Self { locs, spec }
    }
}

impl CovarianceSource for SpatialCovariance<'_> {
    fn dim(&self) -> usize {
        self.locs.len()
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            1.0
        } else {
            self.spec.covariance(&self.locs[i], &self.locs[j])
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TermTag {
    Numerator = 1,
    Denominator = 2,
}

/// Seed of one CDF evaluation inside a Vecchia product.
pub fn term_seed(master: u64, block_id: usize, tag: TermTag) -> u64 {
    let mut z = master
        ^ (block_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (tag as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    // splitmix64 finaliser
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TermResult {
    pub block_id: usize,
    pub log_numerator: LogProbEstimate,
    pub log_denominator: Option<LogProbEstimate>,
}

impl TermResult {
    pub fn log_ratio(&self) -> f64 {
        let num = self.log_numerator.log_value;
        if num == f64::NEG_INFINITY {
            return num;
        }
        num - self.log_denominator.map_or(0.0, |d| d.log_value)
    }

    pub fn variance(&self) -> f64 {
        self.log_numerator.std_error.powi(2)
            + self.log_denominator.map_or(0.0, |d| d.std_error.powi(2))
    }
}

/// Term results of one block at several bound scalings.
#[derive(Debug, Clone)]
struct ScaledTerm {
    numerator: Vec<LogProbEstimate>,
    denominator: Option<Vec<LogProbEstimate>>,
}

fn check_inputs<C: CovarianceSource + ?Sized>(
    plan: &CondSetPlan,
    upper: &[f64],
    cov: &C,
) -> Result<()> {
    if upper.len() != cov.dim() {
        return Err(Error::DimensionMismatch(format!(
            "{} bounds for a {}-dimensional covariance",
            upper.len(),
            cov.dim()
        )));
    }
    if plan.dim() != upper.len() {
        return Err(Error::DimensionMismatch(format!(
            "plan covers {} variables, bound has {}",
            plan.dim(),
            upper.len()
        )));
    }
    Ok(())
}

fn log_cdf_subset<C: CovarianceSource + ?Sized>(
    idx: &[usize],
    upper: &[f64],
    cov: &C,
    scales: &[f64],
    cfg: &QmcConfig,
    seed: u64,
) -> Result<Vec<LogProbEstimate>> {
    let bounds: Vec<f64> = idx.iter().map(|&i| upper[i]).collect();
    if bounds.contains(&f64::NEG_INFINITY) {
        return Ok(vec![LogProbEstimate::zero_probability(); scales.len()]);
    }
    let prepared = PreparedMvn::new(&cov.submatrix(idx), &bounds)?;
    Ok(prepared.log_cdf_scaled(scales, cfg, seed))
}

fn scaled_term<C: CovarianceSource + ?Sized>(
    plan: &CondSetPlan,
    block_id: usize,
    upper: &[f64],
    cov: &C,
    scales: &[f64],
    cfg: &QmcConfig,
) -> Result<ScaledTerm> {
    let cond = &plan.cond_sets[block_id];
    let mut joint = cond.clone();
    joint.extend_from_slice(&plan.blocks[block_id]);
    let numerator = log_cdf_subset(
        &joint,
        upper,
        cov,
        scales,
        cfg,
        term_seed(cfg.seed, block_id, TermTag::Numerator),
    )?;
    let denominator = if cond.is_empty() {
        None
    } else {
        Some(log_cdf_subset(
            cond,
            upper,
            cov,
            scales,
            cfg,
            term_seed(cfg.seed, block_id, TermTag::Denominator),
        )?)
    };
    Ok(ScaledTerm {
        numerator,
        denominator,
    })
}

fn scaled_terms<C: CovarianceSource + ?Sized>(
    plan: &CondSetPlan,
    upper: &[f64],
    cov: &C,
    scales: &[f64],
    cfg: &QmcConfig,
    range: Range<usize>,
) -> Result<Vec<ScaledTerm>> {
    range
        .into_par_iter()
        .map(|b| scaled_term(plan, b, upper, cov, scales, cfg))
        .collect()
}

/// Term results for the blocks in `block_range`, against any covariance source.
pub fn evaluate_terms_with<C: CovarianceSource + ?Sized>(
    plan: &CondSetPlan,
    upper: &[f64],
    cov: &C,
    cfg: &QmcConfig,
    block_range: Range<usize>,
) -> Result<Vec<TermResult>> {
    check_inputs(plan, upper, cov)?;
    cfg.validate()?;
    if block_range.end > plan.n_blocks() || block_range.start > block_range.end {
        return Err(Error::invalid(format!(
            "block range {block_range:?} outside 0..{}",
            plan.n_blocks()
        )));
    }
    let start = block_range.start;
    let terms = scaled_terms(plan, upper, cov, &[1.0], cfg, block_range)?;
    Ok(terms
        .into_iter()
        .enumerate()
        .map(|(k, t)| TermResult {
            block_id: start + k,
            log_numerator: t.numerator[0],
            log_denominator: t.denominator.map(|d| d[0]),
        })
        .collect())
}

pub fn evaluate_terms(
    plan: &CondSetPlan,
    upper: &[f64],
    locs: &[Location],
    spec: &CovarianceSpec,
    cfg: &QmcConfig,
    block_range: Range<usize>,
) -> Result<Vec<TermResult>> {
    evaluate_terms_with(
        plan,
        upper,
        &SpatialCovariance::new(locs, *spec),
        cfg,
        block_range,
    )
}

/// Sums term results in the order given. Any zero numerator makes the
/// whole product zero.
pub fn reduce_terms(terms: &[TermResult]) -> LogProbEstimate {
    let mut total = 0.0;
    let mut var = 0.0;
    let mut points = 0;
    for t in terms {
        let r = t.log_ratio();
        if r == f64::NEG_INFINITY {
            return LogProbEstimate::zero_probability();
        }
        total += r;
        var += t.variance();
        points += t.log_numerator.n_points_used + t.log_denominator.map_or(0, |d| d.n_points_used);
    }
    LogProbEstimate {
        log_value: total,
        std_error: var.sqrt(),
        n_points_used: points,
    }
}

/// Vecchia log-CDF against any covariance source.
pub fn vecchia_log_cdf_with<C: CovarianceSource + ?Sized>(
    upper: &[f64],
    cov: &C,
    plan: &CondSetPlan,
    cfg: &QmcConfig,
) -> Result<LogProbEstimate> {
    let terms = evaluate_terms_with(plan, upper, cov, cfg, 0..plan.n_blocks())?;
    Ok(reduce_terms(&terms))
}

/// Approximates `log P(X < upper)` for the spatial process at `locs` by the
/// product of low-dimensional conditional probabilities described by `plan`.
pub fn vecchia_log_cdf(
    upper: &[f64],
    locs: &[Location],
    spec: &CovarianceSpec,
    plan: &CondSetPlan,
    cfg: &QmcConfig,
) -> Result<LogProbEstimate> {
    vecchia_log_cdf_with(upper, &SpatialCovariance::new(locs, *spec), plan, cfg)
}

/// Vecchia log-CDF at `s · upper` for every `s` in `scales` (all `s > 0`).
///
/// Each term is reordered and factorised once and then evaluated at all
/// scales on the same lattice, which is what the radial integrals of the
/// scale-mixture likelihood need.
pub fn vecchia_log_cdf_scaled<C: CovarianceSource + ?Sized>(
    upper: &[f64],
    cov: &C,
    plan: &CondSetPlan,
    cfg: &QmcConfig,
    scales: &[f64],
) -> Result<Vec<LogProbEstimate>> {
    check_inputs(plan, upper, cov)?;
    cfg.validate()?;
    if scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::invalid("bound scalings must be positive and finite"));
    }
    let terms = scaled_terms(plan, upper, cov, scales, cfg, 0..plan.n_blocks())?;
    Ok((0..scales.len())
        .map(|k| {
            let per_scale: Vec<TermResult> = terms
                .iter()
                .enumerate()
                .map(|(b, t)| TermResult {
                    block_id: b,
                    log_numerator: t.numerator[k],
                    log_denominator: t.denominator.as_ref().map(|d| d[k]),
                })
                .collect();
            reduce_terms(&per_scale)
        })
        .collect())
}

/// Runs `f` on a dedicated pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot start {workers} worker threads: {e}")))?;
    Ok(pool.install(f))
}

/// [`vecchia_log_cdf`] with terms spread over `workers` threads.
pub fn vecchia_log_cdf_parallel(
    upper: &[f64],
    locs: &[Location],
    spec: &CovarianceSpec,
    plan: &CondSetPlan,
    cfg: &QmcConfig,
    workers: usize,
) -> Result<LogProbEstimate> {
    with_workers(workers, || vecchia_log_cdf(upper, locs, spec, plan, cfg))?
}

/// Vecchia log-density against any covariance source; exact, no sampling.
pub fn vecchia_log_pdf_with<C: CovarianceSource + ?Sized>(
    x: &[f64],
    cov: &C,
    plan: &CondSetPlan,
) -> Result<f64> {
    let (log_norm, quad) = vecchia_gaussian_parts_with(x, cov, plan)?;
    Ok(log_norm - 0.5 * quad)
}

/// Splits the Vecchia log-density at `x` into `(c, q)` with
/// `log density(s·x) = c − s² q / 2` for every scale `s`.
pub fn vecchia_gaussian_parts_with<C: CovarianceSource + ?Sized>(
    x: &[f64],
    cov: &C,
    plan: &CondSetPlan,
) -> Result<(f64, f64)> {
    check_inputs(plan, x, cov)?;
    let parts: Result<Vec<(f64, f64)>> = (0..plan.n_blocks())
        .into_par_iter()
        .map(|b| {
            let cond = &plan.cond_sets[b];
            let block = &plan.blocks[b];
            let mut joint = cond.clone();
            joint.extend_from_slice(block);
            let sub = cov.submatrix(&joint);
            let c = cond.len();
            let cond_local: Vec<usize> = (0..c).collect();
            let free_local: Vec<usize> = (c..joint.len()).collect();
            let cond_values: Vec<f64> = cond.iter().map(|&i| x[i]).collect();
            let (mean, cov_b) = conditional_gaussian(&sub, &cond_local, &free_local, &cond_values)?;
            let chol = CholeskyFactor::new(&cov_b)?;
            let resid: Vec<f64> = block
                .iter()
                .zip(mean.iter())
                .map(|(&i, mu)| x[i] - mu)
                .collect();
            let z = chol.forward_solve(&resid);
            let log_norm = -(block.len() as f64) * LN_SQRT_2PI - 0.5 * chol.log_det();
            Ok((log_norm, z.iter().map(|v| v * v).sum()))
        })
        .collect();
    Ok(parts?
        .into_iter()
        .fold((0.0, 0.0), |(a, b), (c, q)| (a + c, b + q)))
}

pub fn vecchia_log_pdf(
    x: &[f64],
    locs: &[Location],
    spec: &CovarianceSpec,
    plan: &CondSetPlan,
) -> Result<f64> {
    vecchia_log_pdf_with(x, &SpatialCovariance::new(locs, *spec), plan)
}
