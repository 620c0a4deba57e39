//! Conditioning-set plans and Vecchia approximations of Gaussian
//! log-CDFs and log-densities.

mod eval;
mod plan;

pub use eval::{
    evaluate_terms, evaluate_terms_with, reduce_terms, term_seed, vecchia_gaussian_parts_with,
    vecchia_log_cdf, vecchia_log_cdf_parallel, vecchia_log_cdf_scaled, vecchia_log_cdf_with,
    vecchia_log_pdf, vecchia_log_pdf_with, with_workers, CovarianceSource, SpatialCovariance,
    TermResult, TermTag,
};
pub use plan::{
    build_plan, build_plan_with, CondSetPlan, NeighborStrategy, PlanOptions, VariableOrdering,
};
