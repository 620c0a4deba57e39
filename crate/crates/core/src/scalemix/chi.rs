//! Tail dependence `χ_u` of the scale mixture.

use nalgebra::DMatrix;

use crate::covariance::Location;
use crate::error::{Error, Result};
use crate::mvn::{PreparedMvn, QmcConfig};

use super::marginal::{log_sum_exp, marginal_quantile_with};
use super::mixing::{MixtureParams, QuadratureConfig, RadialRule};

/// `χ_u = (1 − 2u + G₂) / (1 − u)` from the joint probability `G₂ = P(U₁ ≤ u, U₂ ≤ u)`.
pub fn chi_from_joint(u: f64, joint: f64) -> f64 {
    ((1.0 - 2.0 * u + joint) / (1.0 - u)).clamp(0.0, 1.0)
}

/// `P(X₁ ≤ x, X₂ ≤ x)` for two sites with correlation `corr`, using
/// `rule` for the radial integral.
pub fn bivariate_mixture_cdf(x: f64, corr: f64, rule: &RadialRule, qmc: &QmcConfig) -> Result<f64> {
    let sigma = DMatrix::from_row_slice(2, 2, &[1.0, corr, corr, 1.0]);
    let prepared = PreparedMvn::new(&sigma, &[x, x])?;
    let est = prepared.log_cdf_scaled(&rule.inverse_radii(), qmc, qmc.seed);
    let logs = est
        .iter()
        .zip(&rule.log_weights)
        .map(|(e, w)| e.log_value + w);
    Ok(log_sum_exp(logs).exp())
}

/// `χ_u` between sites `a` and `b`.
pub fn chi_u(
    a: &Location,
    b: &Location,
    u: f64,
    params: &MixtureParams,
    quad: &QuadratureConfig,
    qmc: &QmcConfig,
) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::invalid(format!("u must lie in (0, 1), got {u}")));
    }
    let rule = RadialRule::new(params, quad)?;
    let q = marginal_quantile_with(u, &rule)?;
    chi_u_with(params.cov.covariance(a, b), u, q, &rule, qmc)
}

/// `χ_u` for a given correlation, with the marginal quantile `q` at `u`
/// and the radial rule precomputed.
pub fn chi_u_with(corr: f64, u: f64, q: f64, rule: &RadialRule, qmc: &QmcConfig) -> Result<f64> {
    if corr >= 1.0 - 1e-12 {
        return Ok(1.0);
    }
    Ok(chi_from_joint(
        u,
        bivariate_mixture_cdf(q, corr, rule, qmc)?,
    ))
}
