//! Map between ψ = (β, ρ, φ, A) and an unconstrained vector.
//!
//! `β ↦ ln β`, `ρ ↦ ln ρ`, `φ ↦ logit(φ/π)`, `A ↦ ln(A − 1)`. Isotropic
//! parameter sets use only the first two coordinates.

use std::f64::consts::PI;

use crate::covariance::{CovarianceKind, CovarianceSpec};
use crate::error::{Error, Result};
use crate::scalemix::MixtureParams;

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Number of free coordinates for a covariance kind.
pub fn n_free(kind: CovarianceKind) -> usize {
    match kind {
        CovarianceKind::IsotropicExponential => 2,
        CovarianceKind::AnisotropicExponential => 4,
    }
}

pub fn transform_params(psi: &MixtureParams) -> Result<Vec<f64>> {
    psi.validate()?;
    if psi.beta <= 0.0 {
        return Err(Error::invalid(
            "beta = 0 lies on the boundary of the transformed space",
        ));
    }
    let mut v = vec![psi.beta.ln(), psi.cov.rho.ln()];
    if psi.cov.kind == CovarianceKind::AnisotropicExponential {
        let (phi, a) = (psi.cov.phi, psi.cov.aspect);
        if !(phi > 0.0 && phi < PI) {
            return Err(Error::invalid(format!(
                "phi must lie in (0, pi) to be transformed, got {phi}"
            )));
        }
        if !(a > 1.0) {
            return Err(Error::invalid(format!(
                "aspect ratio must exceed 1 to be transformed, got {a}"
            )));
        }
        v.push(logit(phi / PI));
        v.push((a - 1.0).ln());
    }
    Ok(v)
}

pub fn untransform_params(v: &[f64], kind: CovarianceKind, gamma: f64) -> Result<MixtureParams> {
    if v.len() != n_free(kind) {
        return Err(Error::DimensionMismatch(format!(
            "{} coordinates for a {:?} model",
            v.len(),
            kind
        )));
    }
    if v.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid("transformed parameters must be finite"));
    }
    let beta = v[0].exp();
    let rho = v[1].exp();
    let cov = match kind {
        CovarianceKind::IsotropicExponential => CovarianceSpec::isotropic(rho)?,
        CovarianceKind::AnisotropicExponential => {
            CovarianceSpec::anisotropic(rho, PI * sigmoid(v[2]), 1.0 + v[3].exp())?
        }
    };
    MixtureParams::new(beta, gamma, cov)
}
