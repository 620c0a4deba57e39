//! Vecchia-type approximations of high-dimensional Gaussian CDFs for
//! spatial processes, and censored-likelihood inference for a Gaussian
//! scale-mixture model of spatial extremes built on top of them.

pub mod covariance;
pub mod error;
pub mod inference;
pub mod io;
pub mod mvn;
pub mod scalemix;
pub mod vecchia;

pub use covariance::{CovarianceKind, CovarianceSpec, Location};
pub use error::{Error, Result};
pub use mvn::{LogProbEstimate, QmcConfig};
pub use scalemix::{MixtureParams, QuadratureConfig, Replicate};
pub use vecchia::{build_plan, CondSetPlan, NeighborStrategy};
