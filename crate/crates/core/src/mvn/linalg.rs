//! Dense Gaussian algebra: Cholesky factors, log-densities and conditional
//! moments.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use super::normal::LN_SQRT_2PI;
use crate::covariance::{build_covariance, CovarianceSpec, Location};
use crate::error::{Error, Result};

/// Pivots at or below this fraction of the largest diagonal entry are
/// treated as zero.
const PIVOT_RTOL: f64 = 1e-12;

/// Lower Cholesky factor stored densely in row-major order so that the
/// row dot products in forward substitution are contiguous.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    n: usize,
    rows: Vec<f64>,
}

impl CholeskyFactor {
    pub fn new(sigma: &DMatrix<f64>) -> Result<Self> {
        let n = sigma.nrows();
        if sigma.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "covariance is {}x{}",
                n,
                sigma.ncols()
            )));
        }
        let max_diag = (0..n).map(|i| sigma[(i, i)]).fold(0.0f64, f64::max);
        let tol = PIVOT_RTOL * max_diag.max(f64::MIN_POSITIVE);
        let mut rows = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let (head, tail) = rows.split_at_mut(i * n);
                let li = &tail[..j];
                let dot: f64 = if j == i {
                    li.iter().map(|v| v * v).sum()
                } else {
                    let lj = &head[j * n..j * n + j];
                    li.iter().zip(lj).map(|(a, b)| a * b).sum()
                };
                let s = sigma[(i, j)] - dot;
                if i == j {
                    if !(s > tol) {
                        return Err(Error::NotPositiveDefinite { pivot: i, value: s });
                    }
                    tail[i] = s.sqrt();
                } else {
                    tail[j] = s / head[j * n + j];
                }
            }
        }
        Ok(Self { n, rows })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i * self.n + j]
    }

    /// Row `i` up to and including the diagonal.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.n..i * self.n + i + 1]
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(
            self.n,
            self.n,
            |i, j| if j <= i { self.get(i, j) } else { 0.0 },
        )
    }

    /// `ln det Σ = 2 Σ ln L_ii`
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.get(i, i).ln()).sum::<f64>()
    }

    /// Solves `L z = b`.
    pub fn forward_solve(&self, b: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.n];
        for i in 0..self.n {
            let row = self.row(i);
            let s: f64 = row[..i].iter().zip(&z[..i]).map(|(a, b)| a * b).sum();
            z[i] = (b[i] - s) / row[i];
        }
        z
    }

    /// Computes `L z`.
    pub fn mul_vec(&self, z: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).iter().zip(z).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Lower-triangular `L` with `L Lᵀ = sigma`.
pub fn cholesky(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    CholeskyFactor::new(sigma).map(|f| f.to_matrix())
}

/// Log-density of `N(mu, sigma)` at `x`.
pub fn mvn_logpdf(x: &[f64], mu: &[f64], sigma: &DMatrix<f64>) -> Result<f64> {
    if x.len() != mu.len() || x.len() != sigma.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "x has {}, mu {}, sigma {} rows",
            x.len(),
            mu.len(),
            sigma.nrows()
        )));
    }
    let chol = CholeskyFactor::new(sigma)?;
    let centered: Vec<f64> = x.iter().zip(mu).map(|(a, b)| a - b).collect();
    Ok(logpdf_with_factor(&chol, &centered))
}

/// Zero-mean Gaussian log-density given a precomputed factor.
pub fn logpdf_with_factor(chol: &CholeskyFactor, x: &[f64]) -> f64 {
    let z = chol.forward_solve(x);
    let quad: f64 = z.iter().map(|v| v * v).sum();
    -(x.len() as f64) * LN_SQRT_2PI - 0.5 * chol.log_det() - 0.5 * quad
}

/// Moments of the `free_idx` components given the `cond_idx` components
/// equal `cond_values`, for a zero-mean Gaussian with covariance `sigma`.
pub fn conditional_gaussian(
    sigma: &DMatrix<f64>,
    cond_idx: &[usize],
    free_idx: &[usize],
    cond_values: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if cond_idx.len() != cond_values.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} conditioning indices but {} values",
            cond_idx.len(),
            cond_values.len()
        )));
    }
    if cond_idx.iter().any(|c| free_idx.contains(c)) {
        return Err(Error::invalid("conditioning and free index sets overlap"));
    }
    let nf = free_idx.len();
    let sigma_ff = sigma.select_rows(free_idx).select_columns(free_idx);
    if cond_idx.is_empty() {
        return Ok((DVector::zeros(nf), sigma_ff));
    }
    let sigma_cc = sigma.select_rows(cond_idx).select_columns(cond_idx);
    let chol = CholeskyFactor::new(&sigma_cc)?;
    let z = chol.forward_solve(cond_values);
    // Columns of L⁻¹ Σ_cf
    let whitened: Vec<Vec<f64>> = free_idx
        .iter()
        .map(|&f| {
            let col: Vec<f64> = cond_idx.iter().map(|&c| sigma[(c, f)]).collect();
            chol.forward_solve(&col)
        })
        .collect();
    let mean = DVector::from_fn(nf, |a, _| {
        whitened[a].iter().zip(&z).map(|(u, v)| u * v).sum()
    });
    let mut cov = sigma_ff;
    for a in 0..nf {
        for b in 0..=a {
            let dot: f64 = whitened[a]
                .iter()
                .zip(&whitened[b])
                .map(|(u, v)| u * v)
                .sum();
            cov[(a, b)] -= dot;
            if a != b {
                cov[(b, a)] = cov[(a, b)];
            }
        }
    }
    Ok((mean, cov))
}

/// One draw `L z` of the zero-mean process at `locs`, with `z` taken from a
/// ChaCha stream keyed by `seed`.
pub fn simulate_gp(locs: &[Location], spec: &CovarianceSpec, seed: u64) -> Result<Vec<f64>> {
    let sigma = build_covariance(locs, spec);
    let chol = CholeskyFactor::new(&sigma)?;
    Ok(simulate_with_factor(&chol, seed))
}

pub fn simulate_with_factor(chol: &CholeskyFactor, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let z: Vec<f64> = (0..chol.dim())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    chol.mul_vec(&z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::make_grid;

    fn exp_line(d: usize, rho: f64) -> DMatrix<f64> {
        DMatrix::from_fn(d, d, |i, j| (-(i as f64 - j as f64).abs() / rho).exp())
    }

    #[test]
    fn cholesky_closed_forms() {
        let eye = DMatrix::<f64>::identity(4, 4);
        assert_eq!(cholesky(&eye).unwrap(), eye);
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let l = cholesky(&s).unwrap();
        assert!((l[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((l[(1, 0)] - 0.5).abs() < 1e-15);
        assert!((l[(1, 1)] - 0.75f64.sqrt()).abs() < 1e-15);
        assert_eq!(l[(0, 1)], 0.0);
    }

    #[test]
    fn cholesky_multiplies_back() {
        let locs: Vec<Location> = (0..10)
            .map(|i| Location::new((i * 7 % 10) as f64 * 0.37, (i * 3 % 10) as f64 * 0.51))
            .collect();
        let sigma = build_covariance(&locs, &CovarianceSpec::anisotropic(1.3, 0.4, 1.8).unwrap());
        let l = cholesky(&sigma).unwrap();
        let back = &l * l.transpose();
        assert!((back - &sigma).norm() / sigma.norm() < 1e-10);
    }

    #[test]
    fn cholesky_rejects_duplicates() {
        let locs = vec![
            Location::new(0.0, 0.0),
            Location::new(1.0, 1.0),
            Location::new(0.0, 0.0),
        ];
        let sigma = build_covariance(&locs, &CovarianceSpec::isotropic(1.0).unwrap());
        assert!(matches!(
            cholesky(&sigma),
            Err(Error::NotPositiveDefinite { pivot: 2, .. })
        ));
    }

    #[test]
    fn logpdf_simple_cases() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let v = mvn_logpdf(&[0.0], &[0.0], &one).unwrap();
        assert!((v + 0.918_938_533_204_672_7).abs() < 1e-12);
        let eye = DMatrix::<f64>::identity(2, 2);
        let v = mvn_logpdf(&[0.3, -1.2], &[0.0, 0.0], &eye).unwrap();
        let expected = -2.0 * LN_SQRT_2PI - 0.5 * (0.09 + 1.44);
        assert!((v - expected).abs() < 1e-12);
    }

    #[test]
    fn logpdf_matches_dense_inverse() {
        let sigma = exp_line(5, 1.0);
        let x = [0.3, -0.4, 1.1, 0.2, -0.9];
        let mu = [0.1, 0.0, -0.2, 0.0, 0.3];
        let inv = sigma.clone().try_inverse().unwrap();
        let d = DVector::from_iterator(5, x.iter().zip(&mu).map(|(a, b)| a - b));
        let quad = (d.transpose() * &inv * &d)[(0, 0)];
        let oracle =
            -2.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * sigma.determinant().ln() - 0.5 * quad;
        assert!((mvn_logpdf(&x, &mu, &sigma).unwrap() - oracle).abs() < 1e-10);
    }

    #[test]
    fn conditional_identities() {
        let diag = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0]));
        let (m, c) = conditional_gaussian(&diag, &[0], &[1, 2], &[1.5]).unwrap();
        assert_eq!(m.as_slice(), &[0.0, 0.0]);
        assert_eq!(
            c,
            DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]))
        );

        let rho = 0.6;
        let s = DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]);
        let (m, c) = conditional_gaussian(&s, &[0], &[1], &[0.8]).unwrap();
        assert!((m[0] - rho * 0.8).abs() < 1e-15);
        assert!((c[(0, 0)] - (1.0 - rho * rho)).abs() < 1e-15);
    }

    #[test]
    fn conditional_matches_block_inverse() {
        let locs = make_grid(3, 0.7);
        let sigma = build_covariance(
            &locs[..6],
            &CovarianceSpec::anisotropic(1.0, 0.9, 1.5).unwrap(),
        );
        let cond = [4, 0, 2];
        let free = [1, 5, 3];
        let vals = [0.4, -1.0, 0.25];
        let (m, c) = conditional_gaussian(&sigma, &cond, &free, &vals).unwrap();
        let s_cc = sigma.select_rows(&cond).select_columns(&cond);
        let s_fc = sigma.select_rows(&free).select_columns(&cond);
        let s_ff = sigma.select_rows(&free).select_columns(&free);
        let inv = s_cc.try_inverse().unwrap();
        let m_oracle = &s_fc * &inv * DVector::from_row_slice(&vals);
        let c_oracle = &s_ff - &s_fc * &inv * s_fc.transpose();
        assert!((m - m_oracle).amax() < 1e-12);
        assert!((c - c_oracle).amax() < 1e-12);
    }

    #[test]
    fn conditional_rejects_overlap() {
        let s = exp_line(3, 1.0);
        assert!(conditional_gaussian(&s, &[0, 1], &[1, 2], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn simulation_is_deterministic() {
        let locs = make_grid(3, 1.0);
        let spec = CovarianceSpec::isotropic(1.0).unwrap();
        let a = simulate_gp(&locs, &spec, 42).unwrap();
        let b = simulate_gp(&locs, &spec, 42).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_ne!(a, simulate_gp(&locs, &spec, 43).unwrap());
        let single = simulate_gp(&[Location::new(0.0, 0.0)], &spec, 9).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let z: f64 = StandardNormal.sample(&mut rng);
        assert_eq!(single, vec![z]);
    }
}
