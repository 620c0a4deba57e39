//! Gaussian scale mixture `X(s) = R · W(s)` for spatial extremes: the
//! mixing law, marginal and joint mixture integrals, the censored copula
//! likelihood and the `χ_u` tail-dependence function.

mod chi;
mod likelihood;
mod marginal;
mod mixing;
mod rank;

pub use chi::{bivariate_mixture_cdf, chi_from_joint, chi_u, chi_u_with};
pub use likelihood::{
    censored_loglik_replicate, CensoredLikelihood, LoglikTerm, ModelState, Replicate,
    VecchiaSettings,
};
pub use marginal::{
    marginal_cdf, marginal_cdf_with, marginal_log_pdf_with, marginal_pdf, marginal_pdf_with,
    marginal_quantile, marginal_quantile_with,
};
pub use mixing::{
    mixing_cdf, mixing_pdf, mixing_quantile, GaussLegendre, MixtureParams, QuadratureConfig,
    RadialRule,
};
pub use rank::rank_transform;
