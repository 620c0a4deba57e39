//! Marginal law of `X = R · W` with `W ~ N(0, 1)`.

use crate::error::{Error, Result};
use crate::mvn::{log_std_normal_pdf, std_normal_cdf};

use super::mixing::{MixtureParams, QuadratureConfig, RadialRule};

/// `G_M(x) = E[Φ(x / R)]`.
pub fn marginal_cdf(x: f64, params: &MixtureParams, quad: &QuadratureConfig) -> Result<f64> {
    Ok(marginal_cdf_with(x, &RadialRule::new(params, quad)?))
}

/// `g_M(x) = E[φ(x / R) / R]`.
pub fn marginal_pdf(x: f64, params: &MixtureParams, quad: &QuadratureConfig) -> Result<f64> {
    Ok(marginal_pdf_with(x, &RadialRule::new(params, quad)?))
}

pub fn marginal_quantile(
    prob: f64,
    params: &MixtureParams,
    quad: &QuadratureConfig,
) -> Result<f64> {
    marginal_quantile_with(prob, &RadialRule::new(params, quad)?)
}

pub fn marginal_cdf_with(x: f64, rule: &RadialRule) -> f64 {
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    if x == f64::INFINITY {
        return 1.0;
    }
    rule.expectation(|r| std_normal_cdf(x / r)).clamp(0.0, 1.0)
}

pub fn marginal_pdf_with(x: f64, rule: &RadialRule) -> f64 {
    marginal_log_pdf_with(x, rule).exp()
}

/// `log g_M(x)` assembled by log-sum-exp over the radial nodes.
pub fn marginal_log_pdf_with(x: f64, rule: &RadialRule) -> f64 {
    if !x.is_finite() {
        return f64::NEG_INFINITY;
    }
    let terms = rule
        .radii
        .iter()
        .zip(&rule.log_weights)
        .map(|(&r, &lw)| lw + log_std_normal_pdf(x / r) - r.ln());
    log_sum_exp(terms)
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Inverse of the marginal CDF by safeguarded Newton inside an expanding
/// bracket. Targets `|G_M(x) − prob| ≤ 1e-12`.
pub fn marginal_quantile_with(prob: f64, rule: &RadialRule) -> Result<f64> {
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::invalid(format!(
            "quantile level must lie in (0, 1), got {prob}"
        )));
    }
    let f = |x: f64| marginal_cdf_with(x, rule) - prob;
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    while f(lo) > 0.0 {
        lo *= 2.0;
        if lo < -1e300 {
            return Err(Error::NotBracketed(format!(
                "lower quantile bracket diverged for p = {prob}"
            )));
        }
    }
    while f(hi) < 0.0 {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::NotBracketed(format!(
                "upper quantile bracket diverged for p = {prob}"
            )));
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let fx = f(x);
        if fx.abs() <= 1e-12 * prob.min(1.0 - prob).max(1e-3) {
            return Ok(x);
        }
        if fx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let dens = marginal_pdf_with(x, rule);
        let newton = x - fx / dens;
        x = if dens > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 4.0 * f64::EPSILON * x.abs().max(1.0) {
            return Ok(x);
        }
    }
    Ok(x)
}
