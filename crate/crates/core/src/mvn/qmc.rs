//! Randomised lattice-rule estimation of Gaussian orthant probabilities.
//!
//! `P(X < b)` for `X ~ N(0, Σ)` is rewritten through the Cholesky factor
//! `L` as an integral over the unit cube (separation of variables): with
//! `e_1 = Φ(b_1 / L_11)` and, for later variables,
//! `e_i = Φ((b_i − Σ_{j<i} L_ij y_j) / L_ii)`, `y_j = Φ⁻¹(w_j e_j)`,
//! the probability is `E[Π e_i]` over `w ~ U(0,1)^{d−1}`.
//!
//! The expectation is estimated with a Richtmyer lattice (`frac(√p_k)`
//! generators, prime point count), periodised with the baker's transform,
//! paired with antithetic points, and randomised by `n_shifts` independent
//! uniform shifts. The spread across shifts gives the standard error.
//! Everything is accumulated on the log scale.

use std::sync::OnceLock;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linalg::CholeskyFactor;
use super::normal::{bivariate_normal_cdf, std_normal_cdf, std_normal_quantile};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QmcConfig {
    pub n_points: usize,
    pub n_shifts: usize,
    pub seed: u64,
}

impl Default for QmcConfig {
    fn default() -> Self {
        Self {
            n_points: 499,
            n_shifts: 10,
            seed: 0,
        }
    }
}

impl QmcConfig {
    pub fn new(n_points: usize, n_shifts: usize, seed: u64) -> Result<Self> {
        let cfg = Self {
            n_points,
            n_shifts,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !is_prime(self.n_points) {
            return Err(Error::invalid(format!(
                "lattice size {} is not prime",
                self.n_points
            )));
        }
        if self.n_shifts < 2 {
            return Err(Error::invalid(
                "at least two random shifts are needed for a standard error",
            ));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Estimate of a log-probability with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogProbEstimate {
    pub log_value: f64,
    pub std_error: f64,
    pub n_points_used: usize,
}

impl LogProbEstimate {
    pub fn exact(log_value: f64) -> Self {
        Self {
            log_value,
            std_error: 0.0,
            n_points_used: 0,
        }
    }

    pub fn zero_probability() -> Self {
        Self::exact(f64::NEG_INFINITY)
    }
}

pub fn is_prime(n: usize) -> bool {
    if n < 2 {
        return false;
    }
    if n % 2 == 0 {
        return n == 2;
    }
    let mut k = 3;
    while k * k <= n {
        if n % k == 0 {
            return false;
        }
        k += 2;
    }
    true
}

fn first_primes(count: usize) -> Vec<usize> {
    // p_n < n (ln n + ln ln n) for n >= 6
    let n = count.max(6) as f64;
    let limit = (n * (n.ln() + n.ln().ln())).ceil() as usize + 1;
    let mut sieve = vec![true; limit + 1];
    sieve[0] = false;
    sieve[1] = false;
    let mut i = 2;
    while i * i <= limit {
        if sieve[i] {
            let mut j = i * i;
            while j <= limit {
                sieve[j] = false;
                j += i;
            }
        }
        i += 1;
    }
    sieve
        .iter()
        .enumerate()
        .filter(|(_, &p)| p)
        .map(|(k, _)| k)
        .take(count)
        .collect()
}

const CACHED_DIMS: usize = 16_384;

/// Richtmyer generator `frac(√p_k)` for the first `dim` primes.
pub fn lattice_generator(dim: usize) -> Vec<f64> {
    static CACHE: OnceLock<Vec<f64>> = OnceLock::new();
    let make = |n: usize| -> Vec<f64> {
        first_primes(n)
            .into_iter()
            .map(|p| (p as f64).sqrt().fract())
            .collect()
    };
    if dim <= CACHED_DIMS {
        CACHE.get_or_init(|| make(CACHED_DIMS))[..dim].to_vec()
    } else {
        make(dim)
    }
}

const LANES: usize = 4;
const TINY_FACTOR: f64 = 1e-100;
const BVN_MIN_PROB: f64 = 1e-8;
const RESCALE: f64 = 1e200;
const LN_RESCALE: f64 = 460.517_018_598_809_1;

/// A Gaussian orthant problem after variable reordering and factorisation,
/// ready to be evaluated at the bound vector or at positive rescalings of it.
///
/// Variables are sorted by ascending standardised bound `b_i / √Σ_ii`; the
/// order is invariant under positive scaling of `b`, so one factorisation
/// serves every scale.
#[derive(Debug, Clone)]
pub struct PreparedMvn {
    dim: usize,
    bounds: Vec<f64>,
    packed: Vec<f64>,
    inv_diag: Vec<f64>,
}

impl PreparedMvn {
    pub fn new(sigma: &DMatrix<f64>, upper: &[f64]) -> Result<Self> {
        let d = upper.len();
        if d == 0 || sigma.nrows() != d || sigma.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "bound has {} entries, covariance is {}x{}",
                d,
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        if let Some(index) = upper.iter().position(|&b| b == f64::NEG_INFINITY) {
            return Err(Error::DegenerateBound { index });
        }
        if upper.iter().any(|b| b.is_nan()) {
            return Err(Error::invalid("NaN in upper bound"));
        }
        let mut order: Vec<usize> = (0..d).collect();
        let standardized: Vec<f64> = (0..d).map(|i| upper[i] / sigma[(i, i)].sqrt()).collect();
        order.sort_by(|&a, &b| standardized[a].total_cmp(&standardized[b]));
        let permuted = DMatrix::from_fn(d, d, |i, j| sigma[(order[i], order[j])]);
        let chol = CholeskyFactor::new(&permuted)?;
        let mut packed = Vec::with_capacity(d * (d - 1) / 2);
        let mut inv_diag = Vec::with_capacity(d);
        for i in 0..d {
            let row = chol.row(i);
            packed.extend_from_slice(&row[..i]);
            inv_diag.push(1.0 / row[i]);
        }
        Ok(Self {
            dim: d,
            bounds: order.iter().map(|&i| upper[i]).collect(),
            packed,
            inv_diag,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn log_cdf(&self, cfg: &QmcConfig, seed: u64) -> LogProbEstimate {
        self.log_cdf_scaled(&[1.0], cfg, seed)[0]
    }

    /// Estimates `log P(X < s·b)` for every `s` in `scales` (each `s > 0`),
    /// reusing the same randomised lattice for all scales.
    pub fn log_cdf_scaled(
        &self,
        scales: &[f64],
        cfg: &QmcConfig,
        seed: u64,
    ) -> Vec<LogProbEstimate> {
        let d = self.dim;
        let first: Vec<f64> = scales
            .iter()
            .map(|&s| std_normal_cdf(s * self.bounds[0] * self.inv_diag[0]))
            .collect();
        if d == 1 {
            return first
                .iter()
                .map(|e| LogProbEstimate::exact(e.ln()))
                .collect();
        }
        if d == 2 {
            if let Some(exact) = self.bivariate_scaled(scales) {
                return exact;
            }
        }
        let gen = lattice_generator(d - 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = cfg.n_points;
        let ln_count = ((2 * n) as f64).ln();
        let mut shift_logs = vec![Vec::with_capacity(cfg.n_shifts); scales.len()];
        let mut pos = vec![0.0; d - 1];
        let mut w = vec![[0.0; LANES]; d - 1];
        let mut y = vec![[0.0; LANES]; d - 1];
        for _ in 0..cfg.n_shifts {
            for p in pos.iter_mut() {
                *p = rng.random::<f64>();
            }
            let mut acc: Vec<(f64, f64)> = vec![(f64::NEG_INFINITY, 0.0); scales.len()];
            // Two lattice points and their antithetic partners per pass.
            let mut done = 0;
            while done < n {
                let pair = (n - done).min(2);
                for ((p, g), wk) in pos.iter_mut().zip(&gen).zip(w.iter_mut()) {
                    for half in 0..2 {
                        if half < pair {
                            *p += g;
                            if *p >= 1.0 {
                                *p -= 1.0;
                            }
                        }
                        let t = (2.0 * *p - 1.0).abs();
                        wk[2 * half] = t;
                        wk[2 * half + 1] = 1.0 - t;
                    }
                }
                for (k, &s) in scales.iter().enumerate() {
                    let vals = self.log_integrand(&w, s, first[k], &mut y);
                    for v in &vals[..2 * pair] {
                        push_lse(&mut acc[k], *v);
                    }
                }
                done += pair;
            }
            for (k, (m, s)) in acc.into_iter().enumerate() {
                shift_logs[k].push(m + s.ln() - ln_count);
            }
        }
        shift_logs
            .iter()
            .map(|logs| combine_shifts(logs, 2 * n * cfg.n_shifts))
            .collect()
    }

    /// Quadrature values for `d = 2`, or `None` when some probability is too
    /// small for its absolute accuracy to carry over to the logarithm.
    fn bivariate_scaled(&self, scales: &[f64]) -> Option<Vec<LogProbEstimate>> {
        let l21 = self.packed[0];
        let l11 = 1.0 / self.inv_diag[0];
        let l22 = 1.0 / self.inv_diag[1];
        let sd2 = l21.hypot(l22);
        let r = l21 / sd2;
        scales
            .iter()
            .map(|&s| {
                let p = bivariate_normal_cdf(s * self.bounds[0] / l11, s * self.bounds[1] / sd2, r);
                (p >= BVN_MIN_PROB).then(|| LogProbEstimate::exact(p.ln()))
            })
            .collect()
    }

    /// Log of the separation-of-variables integrand at `LANES` points at once;
    /// the lanes are independent chains, which keeps the special-function
    /// latency off the critical path.
    #[inline]
    fn log_integrand(
        &self,
        w: &[[f64; LANES]],
        scale: f64,
        e0: f64,
        y: &mut [[f64; LANES]],
    ) -> [f64; LANES] {
        let d = self.dim;
        let mut prod = [1.0; LANES];
        let mut log_extra = [0.0; LANES];
        let mut e = [e0; LANES];
        let mut start = 0;
        for i in 0..d {
            if i > 0 {
                let off = &self.packed[start..start + i];
                start += i;
                let mut s = [0.0; LANES];
                for (l, yj) in off.iter().zip(&y[..i]) {
                    for k in 0..LANES {
                        s[k] += l * yj[k];
                    }
                }
                let b = scale * self.bounds[i];
                let inv = self.inv_diag[i];
                for k in 0..LANES {
                    e[k] = std_normal_cdf((b - s[k]) * inv);
                }
            }
            for k in 0..LANES {
                if e[k] < TINY_FACTOR {
                    log_extra[k] += e[k].ln();
                } else {
                    prod[k] *= e[k];
                    if prod[k] < 1.0 / RESCALE {
                        prod[k] *= RESCALE;
                        log_extra[k] -= LN_RESCALE;
                    }
                }
            }
            if i + 1 < d {
                for k in 0..LANES {
                    let q = (w[i][k] * e[k]).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
                    y[i][k] = std_normal_quantile(q);
                }
            }
        }
        let mut out = [0.0; LANES];
        for k in 0..LANES {
            out[k] = prod[k].ln() + log_extra[k];
        }
        out
    }
}

#[inline]
fn push_lse(acc: &mut (f64, f64), v: f64) {
    if v == f64::NEG_INFINITY {
        return;
    }
    if v > acc.0 {
        acc.1 = acc.1 * (acc.0 - v).exp() + 1.0;
        acc.0 = v;
    } else {
        acc.1 += (v - acc.0).exp();
    }
}

/// Mean of the per-shift probabilities and the delta-method standard error
/// of its logarithm.
fn combine_shifts(logs: &[f64], n_points_used: usize) -> LogProbEstimate {
    let k = logs.len() as f64;
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return LogProbEstimate {
            log_value: f64::NEG_INFINITY,
            std_error: 0.0,
            n_points_used,
        };
    }
    let rel: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let mean = rel.iter().sum::<f64>() / k;
    let var = rel.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (k - 1.0);
    LogProbEstimate {
        log_value: max + mean.ln(),
        std_error: (var / k).sqrt() / mean,
        n_points_used,
    }
}

/// Lattice-rule estimate of `log P(X < upper)` for `X ~ N(0, sigma)`.
/// Entries of `upper` may be `+inf`; a `-inf` entry is reported as
/// [`Error::DegenerateBound`].
pub fn qmc_mvn_cdf(
    upper: &[f64],
    sigma: &DMatrix<f64>,
    cfg: &QmcConfig,
) -> Result<LogProbEstimate> {
    cfg.validate()?;
    let prepared = PreparedMvn::new(sigma, upper)?;
    Ok(prepared.log_cdf(cfg, cfg.seed))
}
