//! The random scale `R ≥ 1` and its radial quadrature.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceSpec;
use crate::error::{Error, Result};

/// Full parameter vector of the scale mixture `X(s) = R · W(s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    /// Tail-transition parameter; `β > 0` gives asymptotic independence,
    /// `β = 0` asymptotic dependence.
    pub beta: f64,
    pub gamma: f64,
    pub cov: CovarianceSpec,
}

impl MixtureParams {
    pub fn new(beta: f64, gamma: f64, cov: CovarianceSpec) -> Result<Self> {
        let p = Self { beta, gamma, cov };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::invalid(format!(
                "beta must be >= 0, got {}",
                self.beta
            )));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::invalid(format!(
                "gamma must be > 0, got {}",
                self.gamma
            )));
        }
        self.cov.validate()
    }
}

/// `(r^β − 1)/β`, continuous at `β = 0` where it equals `ln r`.
#[inline]
fn box_cox(ln_r: f64, beta: f64) -> f64 {
    if beta == 0.0 {
        ln_r
    } else {
        (beta * ln_r).exp_m1() / beta
    }
}

/// `F_R(r) = 1 − exp{−γ (r^β − 1)/β}` for `r ≥ 1` (Pareto `1 − r^{−γ}` at `β = 0`).
pub fn mixing_cdf(r: f64, params: &MixtureParams) -> f64 {
    if r.is_nan() {
        return f64::NAN;
    }
    if r <= 1.0 {
        return 0.0;
    }
    if r == f64::INFINITY {
        return 1.0;
    }
    -(-params.gamma * box_cox(r.ln(), params.beta)).exp_m1()
}

pub fn mixing_pdf(r: f64, params: &MixtureParams) -> f64 {
    if !(r >= 1.0) || r == f64::INFINITY {
        return 0.0;
    }
    let ln_r = r.ln();
    let (b, g) = (params.beta, params.gamma);
    (g.ln() + (b - 1.0) * ln_r - g * box_cox(ln_r, b)).exp()
}

/// Closed-form inverse of [`mixing_cdf`]. `u = 1` gives `+inf`; arguments
/// outside `[0, 1]` give NaN.
pub fn mixing_quantile(u: f64, params: &MixtureParams) -> f64 {
    if !(0.0..=1.0).contains(&u) {
        return f64::NAN;
    }
    if u == 1.0 {
        return f64::INFINITY;
    }
    // −ln(1 − u) = γ (r^β − 1)/β
    let t = -(-u).ln_1p() / params.gamma;
    if params.beta == 0.0 {
        t.exp()
    } else {
        ((params.beta * t).ln_1p() / params.beta).exp()
    }
}

/// Gauss–Legendre nodes and weights on `(0, 1)`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    fn compute(n: usize) -> Self {
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Newton on P_n starting from the Chebyshev-like guess.
            let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, z);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                let pn = if n == 1 { z } else { p1 };
                let pm = if n == 1 { 1.0 } else { p0 };
                dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
                let dz = pn / dp;
                z -= dz;
                if dz.abs() < 1e-16 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - z * z) * dp * dp);
            // map [-1, 1] -> [0, 1]
            nodes[i] = 0.5 * (1.0 - z);
            nodes[n - 1 - i] = 0.5 * (1.0 + z);
            weights[i] = 0.5 * w;
            weights[n - 1 - i] = 0.5 * w;
        }
        Self { nodes, weights }
    }
}

/// Radial quadrature settings. The node table for each size is computed
/// once per process and shared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub n_nodes: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self { n_nodes: 100 }
    }
}

impl QuadratureConfig {
    pub fn new(n_nodes: usize) -> Result<Self> {
        let q = Self { n_nodes };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_nodes < 8 {
            return Err(Error::invalid(format!(
                "at least 8 quadrature nodes needed, got {}",
                self.n_nodes
            )));
        }
        Ok(())
    }

    pub fn rule(&self) -> Arc<GaussLegendre> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussLegendre>>>> = OnceLock::new();
        let mut cache = CACHE
            .get_or_init(Default::default)
            .lock()
            .unwrap_or_else(|e| e.into_inner());
        cache
            .entry(self.n_nodes)
            .or_insert_with(|| Arc::new(GaussLegendre::compute(self.n_nodes)))
            .clone()
    }
}

/// Quadrature for `E[h(R)] = ∫₀¹ h(F_R⁻¹(u)) du`: radii at the
/// Gauss–Legendre nodes in `u` and the matching weights.
#[derive(Debug, Clone)]
pub struct RadialRule {
    pub radii: Vec<f64>,
    pub weights: Vec<f64>,
    pub log_weights: Vec<f64>,
}

impl RadialRule {
    pub fn new(params: &MixtureParams, quad: &QuadratureConfig) -> Result<Self> {
        params.validate()?;
        quad.validate()?;
        let rule = quad.rule();
        let radii: Vec<f64> = rule
            .nodes
            .iter()
            .map(|&u| mixing_quantile(u, params))
            .collect();
        if radii.iter().any(|r| !(r.is_finite() && *r >= 1.0)) {
            return Err(Error::invalid("radial node outside the support of R"));
        }
        Ok(Self {
            radii,
            weights: rule.weights.clone(),
            log_weights: rule.weights.iter().map(|w| w.ln()).collect(),
        })
    }

    /// `1 / r_k` for every node.
    pub fn inverse_radii(&self) -> Vec<f64> {
        self.radii.iter().map(|r| 1.0 / r).collect()
    }

    pub fn expectation(&self, h: impl Fn(f64) -> f64) -> f64 {
        self.radii
            .iter()
            .zip(&self.weights)
            .map(|(&r, &w)| w * h(r))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(beta: f64, gamma: f64) -> MixtureParams {
        MixtureParams::new(beta, gamma, CovarianceSpec::isotropic(1.0).unwrap()).unwrap()
    }

    #[test]
    fn mixing_cdf_values() {
        for b in [0.0, 0.5, 1.0, 2.0] {
            assert_eq!(mixing_cdf(1.0, &params(b, 1.0)), 0.0);
            assert_eq!(mixing_cdf(0.5, &params(b, 1.0)), 0.0);
            assert_eq!(mixing_cdf(f64::INFINITY, &params(b, 1.0)), 1.0);
        }
        assert!((mixing_cdf(2.0, &params(1.0, 1.0)) - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!((mixing_cdf(4.0, &params(0.0, 1.0)) - 0.75).abs() < 1e-15);
        // continuity in beta at zero
        let near = mixing_cdf(3.0, &params(1e-12, 1.0));
        assert!((near - mixing_cdf(3.0, &params(0.0, 1.0))).abs() < 1e-10);
    }

    #[test]
    fn quantile_inverts() {
        let p = params(1.0, 1.0);
        assert_eq!(mixing_quantile(0.0, &p), 1.0);
        assert!((mixing_quantile(1.0 - (-1.0f64).exp(), &p) - 2.0).abs() < 1e-12);
        assert_eq!(mixing_quantile(1.0, &p), f64::INFINITY);
        assert!(mixing_quantile(1.5, &p).is_nan());
    }

    #[test]
    fn pdf_is_derivative_of_cdf() {
        for b in [0.0, 0.5, 2.0] {
            let p = params(b, 1.3);
            for r in [1.2, 2.0, 5.0] {
                let h = 1e-6;
                let fd = (mixing_cdf(r + h, &p) - mixing_cdf(r - h, &p)) / (2.0 * h);
                assert!((fd - mixing_pdf(r, &p)).abs() < 1e-7, "beta {b} r {r}");
            }
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in [8, 9, 100] {
            let rule = QuadratureConfig::new(n).unwrap().rule();
            let s: f64 = rule.weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-14);
            let m7: f64 = rule
                .nodes
                .iter()
                .zip(&rule.weights)
                .map(|(x, w)| w * x.powi(7))
                .sum();
            assert!((m7 - 0.125).abs() < 1e-14);
            assert!(rule.nodes.windows(2).all(|w| w[0] < w[1]));
        }
        assert!(QuadratureConfig::new(7).is_err());
    }

    #[test]
    fn radial_rule_mean_of_inverse_radius() {
        // E[R^-1] for the Pareto(1) law is 1/2.
        let rr = RadialRule::new(&params(0.0, 1.0), &QuadratureConfig::default()).unwrap();
        assert!((rr.expectation(|r| 1.0 / r) - 0.5).abs() < 1e-12);
    }
}
