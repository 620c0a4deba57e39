//! Censored copula likelihood of one replicate under the scale mixture.
//!
//! Observations at or below the threshold are censored at it. With `I` the
//! exceedances and `C` the censored sites, the replicate contributes
//!
//! * all censored: `log G(x)`, `G(x) = E[Φ_D(x / R)]`;
//! * all exceed: `log g(x) − Σ log g_M(x_k)`, `g(x) = E[φ_D(x / R) R^{−D}]`;
//! * mixed: `log E[Φ_C((x_C − μ_{C|I}) / R; Σ_{C|I}) φ_I(x_I / R) R^{−|I|}] − Σ_{k∈I} log g_M(x_k)`,
//!
//! with every Gaussian CDF and density replaced by its Vecchia approximation.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{build_covariance, CovarianceSpec, Location};
use crate::error::{Error, Result};
use crate::mvn::{conditional_gaussian, LogProbEstimate, QmcConfig};
use crate::vecchia::{
    build_plan_with, vecchia_gaussian_parts_with, vecchia_log_cdf_scaled, CondSetPlan,
    NeighborStrategy, PlanOptions, SpatialCovariance, VariableOrdering,
};

use super::marginal::{log_sum_exp, marginal_log_pdf_with, marginal_quantile_with};
use super::mixing::{MixtureParams, QuadratureConfig, RadialRule};

/// Conditioning-set settings used for every Vecchia evaluation inside the
/// likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VecchiaSettings {
    pub m: usize,
    pub p: usize,
    pub strategy: NeighborStrategy,
    #[serde(default)]
    pub ordering: VariableOrdering,
    pub seed: u64,
}

impl Default for VecchiaSettings {
    fn default() -> Self {
        Self {
            m: 10,
            p: 1,
            strategy: NeighborStrategy::NearestPerElement,
            ordering: VariableOrdering::Coordinate,
            seed: 0,
        }
    }
}

/// One time point on the uniform scale, split at `threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replicate {
    pub values: Vec<Option<f64>>,
    pub threshold: f64,
    pub censored_idx: Vec<usize>,
    pub exceed_idx: Vec<usize>,
}

impl Replicate {
    pub fn new(values: Vec<Option<f64>>, threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::invalid(format!(
                "threshold must lie in (0, 1), got {threshold}"
            )));
        }
        let mut censored_idx = Vec::new();
        let mut exceed_idx = Vec::new();
        for (i, v) in values.iter().enumerate() {
            match *v {
                None => {}
                Some(u) if u > 0.0 && u < 1.0 => {
                    if u > threshold {
                        exceed_idx.push(i);
                    } else {
                        censored_idx.push(i);
                    }
                }
                Some(u) => {
                    return Err(Error::invalid(format!(
                        "value {u} at site {i} is not in (0, 1)"
                    )))
                }
            }
        }
        Ok(Self {
            values,
            threshold,
            censored_idx,
            exceed_idx,
        })
    }

    /// Observed site indices in increasing order.
    pub fn observed(&self) -> Vec<usize> {
        (0..self.values.len())
            .filter(|&i| self.values[i].is_some())
            .collect()
    }

    /// Uniform-scale value after flooring at the threshold.
    pub fn floored(&self, i: usize) -> Option<f64> {
        self.values[i].map(|u| u.max(self.threshold))
    }

    /// Hash of everything the likelihood depends on. Replicates that are
    /// identical after censoring share it, and hence share QMC streams.
    pub fn content_key(&self) -> u64 {
        let mut h = mix64(self.values.len() as u64 ^ self.threshold.to_bits());
        for i in 0..self.values.len() {
            let code = match self.floored(i) {
                None => 0x5bd1_e995,
                Some(u) => u.to_bits(),
            };
            h = mix64(h ^ code.wrapping_add(i as u64));
        }
        h
    }
}

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A log-likelihood contribution with the QMC standard error it carries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoglikTerm {
    pub value: f64,
    pub std_error: f64,
}

/// Everything that depends on ψ but not on the replicate: radial nodes and
/// the marginal transform of each distinct uniform value.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub params: MixtureParams,
    pub rule: RadialRule,
    inv_radii: Vec<f64>,
    log_radii: Vec<f64>,
    /// uniform value bits -> (x, log g_M(x))
    marginals: HashMap<u64, (f64, f64)>,
}

impl ModelState {
    pub fn new<'a>(
        params: &MixtureParams,
        quad: &QuadratureConfig,
        uniforms: impl IntoIterator<Item = &'a f64>,
    ) -> Result<Self> {
        let rule = RadialRule::new(params, quad)?;
        let mut marginals = HashMap::new();
        for &u in uniforms {
            if let std::collections::hash_map::Entry::Vacant(e) = marginals.entry(u.to_bits()) {
                let x = marginal_quantile_with(u, &rule)?;
                e.insert((x, marginal_log_pdf_with(x, &rule)));
            }
        }
        Ok(Self {
            params: *params,
            inv_radii: rule.inverse_radii(),
            log_radii: rule.radii.iter().map(|r| r.ln()).collect(),
            rule,
            marginals,
        })
    }

    /// State covering every floored value that occurs in `reps`.
    pub fn for_replicates(
        params: &MixtureParams,
        quad: &QuadratureConfig,
        reps: &[Replicate],
    ) -> Result<Self> {
        let mut values: Vec<f64> = reps
            .iter()
            .flat_map(|r| (0..r.values.len()).filter_map(move |i| r.floored(i)))
            .collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        Self::new(params, quad, &values)
    }

    fn marginal(&self, u: f64) -> Result<(f64, f64)> {
        match self.marginals.get(&u.to_bits()) {
            Some(v) => Ok(*v),
            None => {
                let x = marginal_quantile_with(u, &self.rule)?;
                Ok((x, marginal_log_pdf_with(x, &self.rule)))
            }
        }
    }

    /// Log-sum-exp over nodes of `log w_k + a_k`, with the delta-method
    /// standard error from per-node errors `se_k`.
    fn radial_sum(&self, a: &[f64], se: &[f64]) -> LogProbEstimate {
        let terms: Vec<f64> = self
            .rule
            .log_weights
            .iter()
            .zip(a)
            .map(|(w, v)| w + v)
            .collect();
        let total = log_sum_exp(terms.iter().copied());
        if total == f64::NEG_INFINITY {
            return LogProbEstimate::zero_probability();
        }
        let std_error = terms
            .iter()
            .zip(se)
            .map(|(t, s)| (t - total).exp() * s)
            .sum();
        LogProbEstimate {
            log_value: total,
            std_error,
            n_points_used: 0,
        }
    }
}

const PLAN_CACHE_LIMIT: usize = 4096;

type PlanKey = (Vec<usize>, u64, u64);

/// Censored likelihood for a fixed set of stations, with plans memoised by
/// the observed subset and the geometry of the covariance.
#[derive(Debug)]
pub struct CensoredLikelihood {
    locs: Vec<Location>,
    pub settings: VecchiaSettings,
    pub qmc: QmcConfig,
    pub quad: QuadratureConfig,
    plans: Mutex<HashMap<PlanKey, Arc<CondSetPlan>>>,
}

impl CensoredLikelihood {
    pub fn new(
        locs: Vec<Location>,
        settings: VecchiaSettings,
        qmc: QmcConfig,
        quad: QuadratureConfig,
    ) -> Result<Self> {
        qmc.validate()?;
        quad.validate()?;
        if settings.m == 0 || settings.p == 0 {
            return Err(Error::invalid("m and p must be positive"));
        }
        Ok(Self {
            locs,
            settings,
            qmc,
            quad,
            plans: Mutex::new(HashMap::new()),
        })
    }

    pub fn locations(&self) -> &[Location] {
        &self.locs
    }

    fn sub_locs(&self, sites: &[usize]) -> Vec<Location> {
        sites.iter().map(|&i| self.locs[i]).collect()
    }

    fn plan(&self, sites: &[usize], spec: &CovarianceSpec) -> Result<Arc<CondSetPlan>> {
        // Only the geometry matters for neighbour choice, not the range.
        let key = (sites.to_vec(), spec.phi.to_bits(), spec.aspect.to_bits());
        if let Some(p) = self
            .plans
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(&key)
        {
            return Ok(p.clone());
        }
        let s = &self.settings;
        let options = PlanOptions {
            ordering: s.ordering,
            ..PlanOptions::default()
        };
        let plan = Arc::new(build_plan_with(
            &self.sub_locs(sites),
            spec,
            s.m,
            s.p,
            s.strategy,
            s.seed,
            options,
        )?);
        let mut cache = self.plans.lock().unwrap_or_else(|e| e.into_inner());
        if cache.len() >= PLAN_CACHE_LIMIT {
            cache.clear();
        }
        Ok(cache.entry(key).or_insert(plan).clone())
    }

    /// Number of memoised plans.
    pub fn cached_plans(&self) -> usize {
        self.plans.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    /// `log G(x)` for the joint mixture CDF at `sites`.
    pub fn log_joint_cdf(
        &self,
        state: &ModelState,
        sites: &[usize],
        x: &[f64],
        seed: u64,
    ) -> Result<LogProbEstimate> {
        self.log_partial(state, sites, &[], x, seed)
    }

    /// `log g(x)` for the joint mixture density at `sites`. Exact given the
    /// plan.
    pub fn log_joint_pdf(&self, state: &ModelState, sites: &[usize], x: &[f64]) -> Result<f64> {
        let all: Vec<usize> = (0..sites.len()).collect();
        Ok(self.log_partial(state, sites, &all, x, 0)?.log_value)
    }

    /// Log of the mixed derivative of `G` in the components `exceed`
    /// (positions into `sites`) at `x`.
    pub fn log_partial(
        &self,
        state: &ModelState,
        sites: &[usize],
        exceed: &[usize],
        x: &[f64],
        seed: u64,
    ) -> Result<LogProbEstimate> {
        if x.len() != sites.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {} sites",
                x.len(),
                sites.len()
            )));
        }
        if sites.is_empty() {
            return Ok(LogProbEstimate::exact(0.0));
        }
        let spec = state.params.cov;
        let n_nodes = state.inv_radii.len();
        let censored: Vec<usize> = (0..sites.len()).filter(|k| !exceed.contains(k)).collect();
        let exceed_sites: Vec<usize> = exceed.iter().map(|&k| sites[k]).collect();
        let censored_sites: Vec<usize> = censored.iter().map(|&k| sites[k]).collect();

        let mut node_log = vec![0.0; n_nodes];
        let mut node_se = vec![0.0; n_nodes];

        if !exceed.is_empty() {
            let locs = self.sub_locs(&exceed_sites);
            let plan = self.plan(&exceed_sites, &spec)?;
            let xi: Vec<f64> = exceed.iter().map(|&k| x[k]).collect();
            let (c, q) =
                vecchia_gaussian_parts_with(&xi, &SpatialCovariance::new(&locs, spec), &plan)?;
            let n = exceed.len() as f64;
            for k in 0..n_nodes {
                let s = state.inv_radii[k];
                node_log[k] = c - 0.5 * q * s * s - n * state.log_radii[k];
            }
        }

        if !censored.is_empty() {
            let plan = self.plan(&censored_sites, &spec)?;
            let cfg = self.qmc.with_seed(seed);
            let estimates = if exceed.is_empty() {
                let locs = self.sub_locs(sites);
                vecchia_log_cdf_scaled(
                    x,
                    &SpatialCovariance::new(&locs, spec),
                    &plan,
                    &cfg,
                    &state.inv_radii,
                )?
            } else {
                let sigma = build_covariance(&self.sub_locs(sites), &spec);
                let xi: Vec<f64> = exceed.iter().map(|&k| x[k]).collect();
                let (mean, cond_cov) = conditional_gaussian(&sigma, exceed, &censored, &xi)?;
                let bound: Vec<f64> = censored
                    .iter()
                    .zip(mean.iter())
                    .map(|(&k, mu)| x[k] - mu)
                    .collect();
                vecchia_log_cdf_scaled(&bound, &cond_cov, &plan, &cfg, &state.inv_radii)?
            };
            for (k, e) in estimates.iter().enumerate() {
                node_log[k] += e.log_value;
                node_se[k] = e.std_error;
            }
        }
        Ok(state.radial_sum(&node_log, &node_se))
    }

    /// Seed for the QMC streams of a replicate; fixed across ψ.
    pub fn replicate_seed(&self, rep: &Replicate) -> u64 {
        mix64(self.qmc.seed ^ rep.content_key())
    }

    /// Censored copula log-likelihood of one replicate. Probability
    /// underflow yields `−∞` with a warning.
    pub fn replicate_loglik(&self, state: &ModelState, rep: &Replicate) -> Result<LoglikTerm> {
        if rep.values.len() != self.locs.len() {
            return Err(Error::DimensionMismatch(format!(
                "replicate has {} values for {} stations",
                rep.values.len(),
                self.locs.len()
            )));
        }
        let sites = rep.observed();
        if sites.is_empty() {
            return Ok(LoglikTerm {
                value: 0.0,
                std_error: 0.0,
            });
        }
        let mut x = Vec::with_capacity(sites.len());
        let mut exceed = Vec::new();
        let mut marginal_sum = 0.0;
        for (k, &i) in sites.iter().enumerate() {
            let u = rep.floored(i).expect("observed site");
            let (xi, log_g) = state.marginal(u)?;
            x.push(xi);
            if rep.values[i].expect("observed site") > rep.threshold {
                exceed.push(k);
                marginal_sum += log_g;
            }
        }
        let est = self.log_partial(state, &sites, &exceed, &x, self.replicate_seed(rep))?;
        if est.log_value == f64::NEG_INFINITY || est.log_value.is_nan() {
            warn!(
                "likelihood underflow for a replicate with {} observed and {} exceeding sites",
                sites.len(),
                exceed.len()
            );
            return Ok(LoglikTerm {
                value: f64::NEG_INFINITY,
                std_error: 0.0,
            });
        }
        Ok(LoglikTerm {
            value: est.log_value - marginal_sum,
            std_error: est.std_error,
        })
    }

    /// [`Self::replicate_loglik`] for many replicates. Replicates that are
    /// identical after censoring are evaluated once; the rest run in parallel.
    pub fn loglik_many(&self, state: &ModelState, reps: &[Replicate]) -> Result<Vec<LoglikTerm>> {
        let mut first: HashMap<u64, usize> = HashMap::new();
        let mut unique: Vec<usize> = Vec::new();
        let slot: Vec<usize> = reps
            .iter()
            .enumerate()
            .map(|(t, r)| {
                *first.entry(r.content_key()).or_insert_with(|| {
                    unique.push(t);
                    unique.len() - 1
                })
            })
            .collect();
        let values: Result<Vec<LoglikTerm>> = unique
            .par_iter()
            .map(|&t| self.replicate_loglik(state, &reps[t]))
            .collect();
        let values = values?;
        Ok(slot.into_iter().map(|s| values[s]).collect())
    }
}

/// One-off evaluation of a single replicate's censored log-likelihood.
pub fn censored_loglik_replicate(
    rep: &Replicate,
    params: &MixtureParams,
    locs: &[Location],
    settings: &VecchiaSettings,
    cfg: &QmcConfig,
    quad: &QuadratureConfig,
) -> Result<f64> {
    let model = CensoredLikelihood::new(locs.to_vec(), *settings, *cfg, *quad)?;
    let state = ModelState::for_replicates(params, quad, std::slice::from_ref(rep))?;
    Ok(model.replicate_loglik(&state, rep)?.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mvn::{mvn_logpdf, std_normal_cdf};
    use crate::scalemix::marginal::marginal_cdf_with;

    fn params(beta: f64, rho: f64) -> MixtureParams {
        MixtureParams::new(beta, 1.0, CovarianceSpec::isotropic(rho).unwrap()).unwrap()
    }

    fn line(d: usize) -> Vec<Location> {
        (0..d)
            .map(|i| Location::new(i as f64 * 0.7, 0.3 * (i % 2) as f64))
            .collect()
    }

    fn model(locs: Vec<Location>, m: usize) -> CensoredLikelihood {
        let settings = VecchiaSettings {
            m,
            ..Default::default()
        };
        CensoredLikelihood::new(
            locs,
            settings,
            QmcConfig::default(),
            QuadratureConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn replicate_split() {
        let r = Replicate::new(vec![Some(0.5), None, Some(0.97), Some(0.95)], 0.95).unwrap();
        assert_eq!(r.censored_idx, vec![0, 3]);
        assert_eq!(r.exceed_idx, vec![2]);
        assert_eq!(r.observed(), vec![0, 2, 3]);
        assert!(Replicate::new(vec![Some(1.0)], 0.95).is_err());
        assert!(Replicate::new(vec![Some(0.5)], 1.0).is_err());
        // identical after censoring
        let a = Replicate::new(vec![Some(0.1), Some(0.99)], 0.9).unwrap();
        let b = Replicate::new(vec![Some(0.7), Some(0.99)], 0.9).unwrap();
        assert_eq!(a.content_key(), b.content_key());
    }

    #[test]
    fn one_site_censored_is_threshold() {
        let rep = Replicate::new(vec![Some(0.3)], 0.95).unwrap();
        let v = censored_loglik_replicate(
            &rep,
            &params(1.0, 1.0),
            &line(1),
            &VecchiaSettings::default(),
            &QmcConfig::default(),
            &QuadratureConfig::default(),
        )
        .unwrap();
        assert!((v - 0.95f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn one_site_exceedance_is_zero() {
        // copula density of a single margin is 1
        let rep = Replicate::new(vec![Some(0.98)], 0.95).unwrap();
        let v = censored_loglik_replicate(
            &rep,
            &params(0.5, 1.0),
            &line(1),
            &VecchiaSettings::default(),
            &QmcConfig::default(),
            &QuadratureConfig::default(),
        )
        .unwrap();
        assert!(v.abs() < 1e-10);
    }

    #[test]
    fn joint_density_matches_dense_mixture() {
        let locs = line(3);
        let p = params(1.0, 1.5);
        let lik = model(locs.clone(), 5);
        let state = ModelState::new(&p, &lik.quad, []).unwrap();
        let x = [1.2, 2.5, 0.7];
        let sigma = build_covariance(&locs, &p.cov);
        let dense: f64 = state.rule.expectation(|r| {
            (mvn_logpdf(&x.map(|v| v / r), &[0.0; 3], &sigma).unwrap() - 3.0 * r.ln()).exp()
        });
        let got = lik.log_joint_pdf(&state, &[0, 1, 2], &x).unwrap();
        assert!((got - dense.ln()).abs() < 1e-10);
    }

    #[test]
    fn marginal_cdf_is_one_dimensional_joint_cdf() {
        let lik = model(line(2), 3);
        let p = params(0.5, 1.0);
        let state = ModelState::new(&p, &lik.quad, []).unwrap();
        let g = lik.log_joint_cdf(&state, &[1], &[1.3], 0).unwrap();
        assert!((g.log_value - marginal_cdf_with(1.3, &state.rule).ln()).abs() < 1e-12);
        assert_eq!(g.std_error, 0.0);
    }

    #[test]
    fn independent_sites_factor_inside_the_mixture() {
        // far apart: W components independent, R still shared
        let locs = vec![Location::new(0.0, 0.0), Location::new(1e4, 0.0)];
        let lik = model(locs, 3);
        let p = params(1.0, 1.0);
        let state = ModelState::new(&p, &lik.quad, []).unwrap();
        let got = lik.log_joint_cdf(&state, &[0, 1], &[1.0, 2.0], 7).unwrap();
        let oracle = state
            .rule
            .expectation(|r| std_normal_cdf(1.0 / r) * std_normal_cdf(2.0 / r));
        assert!((got.log_value - oracle.ln()).abs() < 1e-9);
    }

    #[test]
    fn case_split_is_consistent() {
        let locs = line(4);
        let lik = model(locs, 3);
        let p = params(0.7, 1.0);
        let state = ModelState::new(&p, &lik.quad, []).unwrap();
        let sites = [0, 1, 2, 3];
        let x = [1.0, 1.5, 0.8, 2.0];
        let all = lik
            .log_partial(&state, &sites, &[0, 1, 2, 3], &x, 3)
            .unwrap();
        let pdf = lik.log_joint_pdf(&state, &sites, &x).unwrap();
        assert_eq!(all.log_value, pdf);
        let none = lik.log_partial(&state, &sites, &[], &x, 3).unwrap();
        let cdf = lik.log_joint_cdf(&state, &sites, &x, 3).unwrap();
        assert_eq!(none, cdf);
    }

    #[test]
    fn duplicates_evaluate_once_and_agree() {
        let locs = line(5);
        let lik = model(locs, 2);
        let p = params(0.5, 1.0);
        let reps = vec![
            Replicate::new(
                vec![Some(0.2), Some(0.99), Some(0.5), None, Some(0.97)],
                0.9,
            )
            .unwrap(),
            Replicate::new(
                vec![Some(0.3), Some(0.4), Some(0.5), Some(0.6), Some(0.7)],
                0.9,
            )
            .unwrap(),
            Replicate::new(
                vec![Some(0.1), Some(0.99), Some(0.2), None, Some(0.97)],
                0.9,
            )
            .unwrap(),
        ];
        let state = ModelState::for_replicates(&p, &lik.quad, &reps).unwrap();
        let many = lik.loglik_many(&state, &reps).unwrap();
        assert_eq!(many[0], many[2]);
        for (r, v) in reps.iter().zip(&many) {
            assert_eq!(lik.replicate_loglik(&state, r).unwrap(), *v);
            assert!(v.value.is_finite() && v.value < 0.0);
        }
    }
}
