//! Censored-likelihood estimation of ψ = (β, ρ, φ, A).

mod fit;
mod optimizer;
mod transform;

pub use fit::{
    fit, full_loglik, CensoredDataset, FitConfig, FitResult, FitTraceEntry, LoglikEvaluator,
    LoglikSummary,
};
pub use optimizer::{nelder_mead, NelderMeadOptions, NelderMeadResult, TraceEntry};
pub use transform::{n_free, transform_params, untransform_params};
