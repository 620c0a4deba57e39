//! Low-dimensional Gaussian machinery: normal CDF and quantile, Cholesky
//! factors, log-densities, conditional moments, the lattice-rule CDF
//! estimator and process simulation.

mod linalg;
mod normal;
mod qmc;

pub use linalg::{
    cholesky, conditional_gaussian, logpdf_with_factor, mvn_logpdf, simulate_gp,
    simulate_with_factor, CholeskyFactor,
};
pub use normal::{
    bivariate_normal_cdf, log_std_normal_pdf, std_normal_cdf, std_normal_pdf, std_normal_quantile,
    LN_SQRT_2PI,
};
pub use qmc::{is_prime, lattice_generator, qmc_mvn_cdf, LogProbEstimate, PreparedMvn, QmcConfig};
