//! Full-data censored log-likelihood and its maximisation.

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::covariance::{CovarianceSpec, Location};
use crate::error::{Error, Result};
use crate::mvn::QmcConfig;
use crate::scalemix::{
    rank_transform, CensoredLikelihood, MixtureParams, ModelState, QuadratureConfig, Replicate,
    VecchiaSettings,
};
use crate::vecchia::{NeighborStrategy, VariableOrdering};

use super::optimizer::{nelder_mead, NelderMeadOptions};
use super::transform::{transform_params, untransform_params};

/// Stations and censored replicates on the uniform scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensoredDataset {
    pub locs: Vec<Location>,
    pub replicates: Vec<Replicate>,
    pub threshold: f64,
}

impl CensoredDataset {
    /// Rank-transforms a `T × D` table of raw values and censors it.
    pub fn from_raw(locs: Vec<Location>, raw: &[Vec<Option<f64>>], threshold: f64) -> Result<Self> {
        Self::from_uniform(locs, rank_transform(raw)?, threshold)
    }

    pub fn from_uniform(
        locs: Vec<Location>,
        uniform: Vec<Vec<Option<f64>>>,
        threshold: f64,
    ) -> Result<Self> {
        let replicates = uniform
            .into_iter()
            .enumerate()
            .map(|(t, row)| {
                if row.len() != locs.len() {
                    return Err(Error::DimensionMismatch(format!(
                        "time {t} has {} values for {} stations",
                        row.len(),
                        locs.len()
                    )));
                }
                Replicate::new(row, threshold)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            locs,
            replicates,
            threshold,
        })
    }

    pub fn n_stations(&self) -> usize {
        self.locs.len()
    }

    pub fn n_times(&self) -> usize {
        self.replicates.len()
    }

    pub fn missing_fraction(&self) -> f64 {
        let cells = self.n_stations() * self.n_times();
        if cells == 0 {
            return 0.0;
        }
        let missing: usize = self
            .replicates
            .iter()
            .map(|r| r.values.iter().filter(|v| v.is_none()).count())
            .sum();
        missing as f64 / cells as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub init: MixtureParams,
    pub max_iter: usize,
    pub tol: f64,
    /// Seeds both the conditioning-set plans and the QMC shifts; the same
    /// shifts are reused at every ψ.
    pub seed: u64,
    pub qmc: QmcConfig,
    pub quad: QuadratureConfig,
    pub m: usize,
    pub p: usize,
    pub strategy: NeighborStrategy,
    pub ordering: VariableOrdering,
    pub threshold: f64,
    pub restart: bool,
    pub initial_step: f64,
    pub keep_trace: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            init: MixtureParams {
                beta: 1.0,
                gamma: 1.0,
                cov: CovarianceSpec::isotropic(1.0).expect("valid default"),
            },
            max_iter: 200,
            tol: 1e-3,
            seed: 0,
            qmc: QmcConfig {
                n_points: 97,
                n_shifts: 4,
                seed: 0,
            },
            quad: QuadratureConfig { n_nodes: 30 },
            m: 5,
            p: 1,
            strategy: NeighborStrategy::NearestPerElement,
            ordering: VariableOrdering::Coordinate,
            threshold: 0.95,
            restart: true,
            initial_step: 0.5,
            keep_trace: true,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.init.validate()?;
        self.qmc.validate()?;
        self.quad.validate()?;
        self.optimizer_options().validate()?;
        if self.m == 0 || self.p == 0 {
            return Err(Error::invalid("m and p must be positive"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::invalid(format!(
                "threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        Ok(())
    }

    pub fn settings(&self) -> VecchiaSettings {
        VecchiaSettings {
            m: self.m,
            p: self.p,
            strategy: self.strategy,
            ordering: self.ordering,
            seed: self.seed,
        }
    }

    pub fn optimizer_options(&self) -> NelderMeadOptions {
        NelderMeadOptions {
            max_iter: self.max_iter,
            tol: self.tol,
            initial_step: self.initial_step,
            restart: self.restart,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoglikSummary {
    pub loglik: f64,
    pub std_error: f64,
    /// Replicates whose probability underflowed and were left out.
    pub n_excluded: usize,
}

/// Evaluates the full log-likelihood of one dataset at many ψ, reusing
/// plans across calls.
#[derive(Debug)]
pub struct LoglikEvaluator<'a> {
    data: &'a CensoredDataset,
    model: CensoredLikelihood,
}

impl<'a> LoglikEvaluator<'a> {
    pub fn new(data: &'a CensoredDataset, cfg: &FitConfig) -> Result<Self> {
        cfg.validate()?;
        let model = CensoredLikelihood::new(
            data.locs.clone(),
            cfg.settings(),
            cfg.qmc.with_seed(cfg.seed),
            cfg.quad,
        )?;
        Ok(Self { data, model })
    }

    pub fn model(&self) -> &CensoredLikelihood {
        &self.model
    }

    pub fn eval(&self, psi: &MixtureParams) -> Result<LoglikSummary> {
        let state = ModelState::for_replicates(psi, &self.model.quad, &self.data.replicates)?;
        let terms = self.model.loglik_many(&state, &self.data.replicates)?;
        let mut summary = LoglikSummary {
            loglik: 0.0,
            std_error: 0.0,
            n_excluded: 0,
        };
        let mut var = 0.0;
        for t in &terms {
            if t.value == f64::NEG_INFINITY {
                summary.n_excluded += 1;
            } else {
                summary.loglik += t.value;
                var += t.std_error * t.std_error;
            }
        }
        summary.std_error = var.sqrt();
        if summary.n_excluded > 0 {
            warn!(
                "{} replicates underflowed and were excluded",
                summary.n_excluded
            );
        }
        Ok(summary)
    }
}

/// `Σ_t log L_t(ψ)` over all replicates.
pub fn full_loglik(
    psi: &MixtureParams,
    data: &CensoredDataset,
    cfg: &FitConfig,
) -> Result<LoglikSummary> {
    LoglikEvaluator::new(data, cfg)?.eval(psi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTraceEntry {
    pub iteration: usize,
    pub loglik: f64,
    pub psi: MixtureParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub psi_hat: MixtureParams,
    pub loglik: f64,
    pub loglik_std_error: f64,
    pub n_evals: usize,
    pub iterations: usize,
    pub converged: bool,
    pub n_excluded: usize,
    /// Set when β̂ is so small that the asymptotically dependent
    /// boundary `β = 0` may be the better description.
    pub beta_at_boundary: bool,
    pub n_stations: usize,
    pub n_times: usize,
    pub missing_fraction: f64,
    pub config: FitConfig,
    pub trace: Option<Vec<FitTraceEntry>>,
}

const BETA_BOUNDARY: f64 = 1e-3;

/// Maximum-likelihood estimate of ψ by Nelder–Mead on the transformed
/// scale; `γ` stays at `cfg.init.gamma` and the covariance kind at that of
/// `cfg.init`.
pub fn fit(data: &CensoredDataset, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    if data.threshold != cfg.threshold {
        return Err(Error::invalid(format!(
            "dataset censored at {} but config asks for {}",
            data.threshold, cfg.threshold
        )));
    }
    let evaluator = LoglikEvaluator::new(data, cfg)?;
    let kind = cfg.init.cov.kind;
    let gamma = cfg.init.gamma;
    let x0 = transform_params(&cfg.init)?;
    let objective = |v: &[f64]| -> f64 {
        let psi = match untransform_params(v, kind, gamma) {
            Ok(p) => p,
            Err(_) => return f64::INFINITY,
        };
        match evaluator.eval(&psi) {
            Ok(s) if s.loglik.is_finite() => -s.loglik,
            Ok(_) => f64::INFINITY,
            Err(e) => {
                debug!("objective failed at {psi:?}: {e}");
                f64::INFINITY
            }
        }
    };
    let opt = nelder_mead(objective, &x0, &cfg.optimizer_options())?;
    let psi_hat = untransform_params(&opt.x, kind, gamma)?;
    let summary = evaluator.eval(&psi_hat)?;
    let trace = cfg.keep_trace.then(|| {
        opt.trace
            .iter()
            .filter_map(|t| {
                Some(FitTraceEntry {
                    iteration: t.iteration,
                    loglik: -t.best_value,
                    psi: untransform_params(&t.best_point, kind, gamma).ok()?,
                })
            })
            .collect()
    });
    Ok(FitResult {
        psi_hat,
        loglik: summary.loglik,
        loglik_std_error: summary.std_error,
        n_evals: opt.n_evals + 1,
        iterations: opt.iterations,
        converged: opt.converged,
        n_excluded: summary.n_excluded,
        beta_at_boundary: psi_hat.beta < BETA_BOUNDARY,
        n_stations: data.n_stations(),
        n_times: data.n_times(),
        missing_fraction: data.missing_fraction(),
        config: *cfg,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::make_grid;

    fn toy_data() -> CensoredDataset {
        let locs = make_grid(2, 1.0);
        let raw: Vec<Vec<Option<f64>>> = (0..12)
            .map(|t| {
                (0..4)
                    .map(|j| {
                        if (t + j) % 7 == 0 {
                            None
                        } else {
                            Some(((t * 7 + j * 3) % 11) as f64 + 0.1 * j as f64)
                        }
                    })
                    .collect()
            })
            .collect();
        CensoredDataset::from_raw(locs, &raw, 0.8).unwrap()
    }

    fn cfg() -> FitConfig {
        FitConfig {
            threshold: 0.8,
            quad: QuadratureConfig { n_nodes: 16 },
            qmc: QmcConfig {
                n_points: 31,
                n_shifts: 2,
                seed: 0,
            },
            m: 2,
            ..Default::default()
        }
    }

    #[test]
    fn dataset_summaries() {
        let d = toy_data();
        assert_eq!(d.n_stations(), 4);
        assert_eq!(d.n_times(), 12);
        let missing = d
            .replicates
            .iter()
            .flat_map(|r| &r.values)
            .filter(|v| v.is_none())
            .count();
        assert!((d.missing_fraction() - missing as f64 / 48.0).abs() < 1e-15);
    }

    #[test]
    fn loglik_is_deterministic_and_additive() {
        let d = toy_data();
        let c = cfg();
        let psi = c.init;
        let a = full_loglik(&psi, &d, &c).unwrap();
        assert_eq!(a, full_loglik(&psi, &d, &c).unwrap());
        let one = CensoredDataset {
            replicates: vec![d.replicates[3].clone()],
            ..d.clone()
        };
        let two = CensoredDataset {
            replicates: vec![d.replicates[3].clone(), d.replicates[3].clone()],
            ..d.clone()
        };
        let l1 = full_loglik(&psi, &one, &c).unwrap().loglik;
        assert_eq!(full_loglik(&psi, &two, &c).unwrap().loglik, 2.0 * l1);
    }

    #[test]
    fn fit_improves_on_init() {
        let d = toy_data();
        let c = FitConfig {
            max_iter: 15,
            ..cfg()
        };
        let start = full_loglik(&c.init, &d, &c).unwrap().loglik;
        let r = fit(&d, &c).unwrap();
        assert!(r.loglik >= start);
        assert_eq!(r.n_times, 12);
        assert!(r.trace.as_ref().is_some_and(|t| !t.is_empty()));
        let json = serde_json::to_string(&r).unwrap();
        let back: FitResult = serde_json::from_str(&json).unwrap();
        assert_eq!(back.psi_hat, r.psi_hat);
    }

    #[test]
    fn threshold_mismatch_is_rejected() {
        let d = toy_data();
        assert!(fit(
            &d,
            &FitConfig {
                threshold: 0.9,
                ..cfg()
            }
        )
        .is_err());
    }
}
