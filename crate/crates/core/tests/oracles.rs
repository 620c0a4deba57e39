use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use vecchia_core::covariance::{build_covariance, make_grid, CovarianceSpec, Location};
use vecchia_core::inference::{
    full_loglik, nelder_mead, CensoredDataset, FitConfig, NelderMeadOptions,
};
use vecchia_core::mvn::{qmc_mvn_cdf, simulate_gp, QmcConfig};
use vecchia_core::scalemix::{
    censored_loglik_replicate, chi_u, mixing_quantile, CensoredLikelihood, MixtureParams,
    ModelState, QuadratureConfig, VecchiaSettings,
};

fn line(d: usize) -> Vec<Location> {
    (0..d).map(|i| Location::new(i as f64, 0.0)).collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn simulated_process_has_the_model_covariance() {
    let locs = vec![
        Location::new(0.0, 0.0),
        Location::new(1.0, 0.0),
        Location::new(0.5, 2.0),
    ];
    let spec = CovarianceSpec::isotropic(1.5).unwrap();
    let n = 100_000;
    let mut acc = DMatrix::<f64>::zeros(3, 3);
    for s in 0..n {
        let w = simulate_gp(&locs, &spec, s).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                acc[(i, j)] += w[i] * w[j];
            }
        }
    }
    let emp = acc / n as f64;
    let sigma = build_covariance(&locs, &spec);
    for i in 0..3 {
        for j in 0..3 {
            assert!(
                (emp[(i, j)] - sigma[(i, j)]).abs() < 0.02,
                "{i},{j}: {}",
                emp[(i, j)]
            );
        }
    }
    assert_eq!(
        simulate_gp(&locs, &spec, 7).unwrap(),
        simulate_gp(&locs, &spec, 7).unwrap()
    );
}

#[test]
fn qmc_standard_error_is_calibrated() {
    let sigma = build_covariance(&line(5), &CovarianceSpec::isotropic(1.0).unwrap());
    let b = [0.5, -0.3, 1.0, 0.2, 0.8];
    let runs: Vec<_> = (0..200)
        .map(|s| qmc_mvn_cdf(&b, &sigma, &QmcConfig::new(101, 10, s).unwrap()).unwrap())
        .collect();
    let mean = runs.iter().map(|e| e.log_value).sum::<f64>() / 200.0;
    let sd = (runs
        .iter()
        .map(|e| (e.log_value - mean).powi(2))
        .sum::<f64>()
        / 199.0)
        .sqrt();
    let mean_se = runs.iter().map(|e| e.std_error).sum::<f64>() / 200.0;
    let ratio = sd / mean_se;
    assert!(
        (0.5..=2.0).contains(&ratio),
        "empirical sd / reported se = {ratio}"
    );
}

#[test]
fn more_lattice_points_reduce_the_error() {
    let locs = make_grid(3, 1.0);
    let sigma = build_covariance(&locs, &CovarianceSpec::isotropic(2.0).unwrap());
    let b = simulate_gp(&locs, &CovarianceSpec::isotropic(2.0).unwrap(), 4).unwrap();
    let se = |n: usize| -> Vec<f64> {
        (0..50)
            .map(|s| {
                qmc_mvn_cdf(&b, &sigma, &QmcConfig::new(n, 10, s).unwrap())
                    .unwrap()
                    .std_error
            })
            .collect()
    };
    assert!(median(se(3607)) < median(se(499)));
}

fn mixture(beta: f64) -> MixtureParams {
    MixtureParams::new(beta, 1.0, CovarianceSpec::isotropic(1.0).unwrap()).unwrap()
}

#[test]
fn density_case_is_the_derivative_of_the_cdf_case() {
    // G(x1, x2) differentiated in x1 equals the mixed-case integrand at D = 2
    let locs = vec![Location::new(0.0, 0.0), Location::new(0.8, 0.3)];
    let model = CensoredLikelihood::new(
        locs,
        VecchiaSettings::default(),
        QmcConfig::new(499, 10, 1).unwrap(),
        QuadratureConfig::new(100).unwrap(),
    )
    .unwrap();
    for beta in [0.0, 0.5, 1.5] {
        let state =
            ModelState::new(&mixture(beta), &QuadratureConfig::new(100).unwrap(), &[]).unwrap();
        let (x1, x2) = (1.3, 0.7);
        let h = 1e-4;
        let g = |a: f64| {
            model
                .log_joint_cdf(&state, &[0, 1], &[a, x2], 3)
                .unwrap()
                .log_value
                .exp()
        };
        let fd = (g(x1 + h) - g(x1 - h)) / (2.0 * h);
        let partial = model
            .log_partial(&state, &[0, 1], &[0], &[x1, x2], 3)
            .unwrap();
        assert!(
            (partial.log_value.exp() - fd).abs() < 1e-4,
            "beta {beta}: {} vs {fd}",
            partial.log_value.exp()
        );
    }
}

#[test]
fn chi_decreases_along_a_ray() {
    let params = mixture(0.5);
    let quad = QuadratureConfig::new(60).unwrap();
    let qmc = QmcConfig::new(499, 10, 0).unwrap();
    let origin = Location::new(0.0, 0.0);
    let chis: Vec<f64> = (0..10)
        .map(|k| {
            chi_u(
                &origin,
                &Location::new(0.4 * k as f64, 0.2 * k as f64),
                0.95,
                &params,
                &quad,
                &qmc,
            )
            .unwrap()
        })
        .collect();
    assert_eq!(chis[0], 1.0);
    for w in chis.windows(2) {
        assert!(w[1] <= w[0] + 1e-6, "{chis:?}");
    }
}

fn synthetic(
    n_side: usize,
    t_len: u64,
    beta: f64,
    seed: u64,
) -> (Vec<Location>, Vec<Vec<Option<f64>>>) {
    let locs = make_grid(n_side, 1.0);
    let params = mixture(beta);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = (0..t_len)
        .map(|t| {
            let r = mixing_quantile(rand::Rng::random::<f64>(&mut rng), &params);
            let w =
                simulate_gp(&locs, &params.cov, seed.wrapping_mul(7919).wrapping_add(t)).unwrap();
            w.iter().map(|v| Some(r * v)).collect()
        })
        .collect();
    (locs, raw)
}

#[test]
fn full_loglik_sums_independent_replicate_values() {
    let (locs, mut raw) = synthetic(5, 20, 0.5, 11);
    raw[3][7] = None;
    raw[12][0] = None;
    let data = CensoredDataset::from_raw(locs.clone(), &raw, 0.8).unwrap();
    let cfg = FitConfig {
        threshold: 0.8,
        m: 3,
        qmc: QmcConfig::new(31, 3, 0).unwrap(),
        quad: QuadratureConfig::new(16).unwrap(),
        ..Default::default()
    };
    let psi = mixture(0.7);
    let total = full_loglik(&psi, &data, &cfg).unwrap();
    let qmc = cfg.qmc.with_seed(cfg.seed);
    let oracle: f64 = data
        .replicates
        .iter()
        .map(|rep| {
            censored_loglik_replicate(rep, &psi, &locs, &cfg.settings(), &qmc, &cfg.quad).unwrap()
        })
        .sum();
    assert!(
        (total.loglik - oracle).abs() < 1e-9 * oracle.abs(),
        "{} vs {oracle}",
        total.loglik
    );
    // a single replicate is its own total
    let one =
        CensoredDataset::from_uniform(locs, vec![data.replicates[5].values.clone()], 0.8).unwrap();
    let single = full_loglik(&psi, &one, &cfg).unwrap().loglik;
    let direct = censored_loglik_replicate(
        &data.replicates[5],
        &psi,
        one.locs.as_slice(),
        &cfg.settings(),
        &qmc,
        &cfg.quad,
    )
    .unwrap();
    assert_eq!(single, direct);
}

#[test]
fn nelder_mead_handles_a_noisy_objective() {
    let sigma = 0.01;
    let runs = 20;
    let mut inside = 0;
    for r in 0..runs {
        let mut rng = ChaCha8Rng::seed_from_u64(r);
        let mut noisy = |x: &[f64]| {
            let e: f64 = StandardNormal.sample(&mut rng);
            (x[0] - 1.0).powi(2) + (x[1] + 2.0).powi(2) + sigma * e
        };
        let res = nelder_mead(
            &mut noisy,
            &[0.0, 0.0],
            &NelderMeadOptions {
                max_iter: 300,
                tol: 1e-4,
                ..Default::default()
            },
        )
        .unwrap();
        let truth = (res.x[0] - 1.0).powi(2) + (res.x[1] + 2.0).powi(2);
        if truth <= 3.0 * sigma {
            inside += 1;
        }
    }
    assert!(inside >= 18, "{inside}/{runs} runs ended in the basin");
}
