//! Planar locations, the (an)isotropic exponential covariance model and
//! neighbour queries.
//!
//! Distances use the rotated and stretched form
//! `h(a, b) = || diag(1, A) · R(φ)⁻¹ · (a − b) ||`, where `R(φ)` is the
//! counter-clockwise rotation by `φ`. Level sets of `h` are ellipses whose
//! major axis points along angle `φ` and whose axis ratio is `A`.
//! The covariance is `Σ_ij = exp(−h_ij / ρ)` with unit variance.

use std::cmp::Ordering;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub x: f64,
    pub y: f64,
}

impl Location {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CovarianceKind {
    IsotropicExponential,
    AnisotropicExponential,
}

/// Parameters of the unit-variance exponential covariance.
///
/// Construct through [`CovarianceSpec::isotropic`] or
/// [`CovarianceSpec::anisotropic`]; both validate their inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSpec {
    pub rho: f64,
    pub phi: f64,
    pub aspect: f64,
    pub kind: CovarianceKind,
}

impl CovarianceSpec {
    pub fn isotropic(rho: f64) -> Result<Self> {
        let spec = Self {
            rho,
            phi: 0.0,
            aspect: 1.0,
            kind: CovarianceKind::IsotropicExponential,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn anisotropic(rho: f64, phi: f64, aspect: f64) -> Result<Self> {
        let spec = Self {
            rho,
            phi,
            aspect,
            kind: CovarianceKind::AnisotropicExponential,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return Err(Error::invalid(format!(
                "range rho must be > 0, got {}",
                self.rho
            )));
        }
        if !(self.phi.is_finite() && (0.0..PI).contains(&self.phi)) {
            return Err(Error::invalid(format!(
                "rotation phi must lie in [0, pi), got {}",
                self.phi
            )));
        }
        if !(self.aspect.is_finite() && self.aspect >= 1.0) {
            return Err(Error::invalid(format!(
                "aspect ratio must be >= 1, got {}",
                self.aspect
            )));
        }
        if self.kind == CovarianceKind::IsotropicExponential
            && (self.phi != 0.0 || self.aspect != 1.0)
        {
            return Err(Error::invalid(
                "isotropic covariance requires phi = 0 and aspect = 1",
            ));
        }
        Ok(())
    }

    /// Correlation at Mahalanobis distance `h`.
    #[inline]
    pub fn correlation(&self, h: f64) -> f64 {
        (-h / self.rho).exp()
    }

    #[inline]
    pub fn covariance(&self, a: &Location, b: &Location) -> f64 {
        self.correlation(mahalanobis_distance(a, b, self))
    }
}

/// Anisotropic distance between two sites under `spec`.
#[inline]
pub fn mahalanobis_distance(a: &Location, b: &Location, spec: &CovarianceSpec) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    if spec.phi == 0.0 && spec.aspect == 1.0 {
        return dx.hypot(dy);
    }
    let (s, c) = spec.phi.sin_cos();
    // R(φ)⁻¹ = R(−φ)
    let u = c * dx + s * dy;
    let v = -s * dx + c * dy;
    u.hypot(spec.aspect * v)
}

/// Dense covariance matrix of `locs`. Duplicated sites are logged; the
/// resulting singular matrix is rejected later by the Cholesky factorisation.
pub fn build_covariance(locs: &[Location], spec: &CovarianceSpec) -> DMatrix<f64> {
    let n = locs.len();
    let dups = duplicate_pairs(locs);
    if dups > 0 {
        log::warn!("{dups} duplicated location pair(s); covariance matrix is singular");
    }
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            spec.covariance(&locs[i], &locs[j])
        }
    })
}

/// Number of exactly coincident location pairs.
pub fn duplicate_pairs(locs: &[Location]) -> usize {
    let mut sorted: Vec<(f64, f64)> = locs.iter().map(|l| (l.x, l.y)).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let mut count = 0;
    let mut run = 1usize;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            count += run * (run - 1) / 2;
            run = 1;
        }
    }
    count + run * (run - 1) / 2
}

/// Square grid of `n_side²` sites in row-major order: index `i * n_side + j`
/// sits at `(j·spacing, i·spacing)`, so consecutive indices run along x.
pub fn make_grid(n_side: usize, spacing: f64) -> Vec<Location> {
    let mut out = Vec::with_capacity(n_side * n_side);
    for i in 0..n_side {
        for j in 0..n_side {
            out.push(Location::new(j as f64 * spacing, i as f64 * spacing));
        }
    }
    out
}

/// The `min(m, |candidates|)` candidates closest to `target`, ascending by
/// distance with ties broken by the smaller index.
pub fn nearest_neighbors(
    locs: &[Location],
    target: usize,
    candidates: &[usize],
    m: usize,
    spec: &CovarianceSpec,
) -> Vec<usize> {
    let t = &locs[target];
    let mut scored: Vec<(f64, usize)> = candidates
        .iter()
        .filter(|&&c| c != target)
        .map(|&c| (mahalanobis_distance(t, &locs[c], spec), c))
        .collect();
    let k = m.min(scored.len());
    if k == 0 {
        return Vec::new();
    }
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_unstable_by(cmp);
    scored.into_iter().map(|(_, i)| i).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iso(rho: f64) -> CovarianceSpec {
        CovarianceSpec::isotropic(rho).unwrap()
    }

    #[test]
    fn euclidean_reduction() {
        let d = mahalanobis_distance(
            &Location::new(0.0, 0.0),
            &Location::new(3.0, 4.0),
            &iso(1.0),
        );
        assert_eq!(d, 5.0);
        let same = CovarianceSpec::anisotropic(1.0, 0.7, 3.0).unwrap();
        assert_eq!(
            mahalanobis_distance(&Location::new(0.0, 0.0), &Location::new(0.0, 0.0), &same),
            0.0
        );
    }

    #[test]
    fn rotated_distance_matches_matrix_oracle() {
        // Explicit 2x2 products: diag(1, A) * R(phi)^T * d
        let (phi, a): (f64, f64) = (std::f64::consts::FRAC_PI_4, 2.0);
        let rot_inv = [[phi.cos(), phi.sin()], [-phi.sin(), phi.cos()]];
        let scale = [[1.0, 0.0], [0.0, a]];
        let d = [1.0, 0.0];
        let r = [
            rot_inv[0][0] * d[0] + rot_inv[0][1] * d[1],
            rot_inv[1][0] * d[0] + rot_inv[1][1] * d[1],
        ];
        let s = [
            scale[0][0] * r[0] + scale[0][1] * r[1],
            scale[1][0] * r[0] + scale[1][1] * r[1],
        ];
        let expected = (s[0] * s[0] + s[1] * s[1]).sqrt();
        let spec = CovarianceSpec::anisotropic(1.0, phi, a).unwrap();
        let got = mahalanobis_distance(&Location::new(0.0, 0.0), &Location::new(1.0, 0.0), &spec);
        assert!((got - expected).abs() < 1e-14, "{got} vs {expected}");
        assert!((got - 2.5f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn major_axis_follows_phi() {
        let spec = CovarianceSpec::anisotropic(1.0, 1.1, 2.29).unwrap();
        let o = Location::new(0.0, 0.0);
        let along = Location::new(1.1f64.cos(), 1.1f64.sin());
        let across = Location::new(-(1.1f64.sin()), 1.1f64.cos());
        assert!((mahalanobis_distance(&o, &along, &spec) - 1.0).abs() < 1e-12);
        assert!((mahalanobis_distance(&o, &across, &spec) - 2.29).abs() < 1e-12);
    }

    #[test]
    fn spec_validation() {
        assert!(CovarianceSpec::isotropic(0.0).is_err());
        assert!(CovarianceSpec::anisotropic(1.0, PI, 2.0).is_err());
        assert!(CovarianceSpec::anisotropic(1.0, 0.5, 0.9).is_err());
        let bad = CovarianceSpec {
            rho: 1.0,
            phi: 0.3,
            aspect: 1.0,
            kind: CovarianceKind::IsotropicExponential,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn covariance_small_cases() {
        let one = build_covariance(&[Location::new(2.0, 3.0)], &iso(1.0));
        assert_eq!(one, DMatrix::from_element(1, 1, 1.0));
        let two = build_covariance(
            &[Location::new(0.0, 0.0), Location::new(0.6, 0.8)],
            &iso(1.0),
        );
        assert!((two[(0, 1)] - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(two[(0, 1)], two[(1, 0)]);
    }

    #[test]
    fn covariance_matches_pairwise_loop() {
        let locs = make_grid(3, 1.0);
        let sigma = build_covariance(&locs, &iso(1.0));
        for i in 0..9 {
            for j in 0..9 {
                let dx = locs[i].x - locs[j].x;
                let dy = locs[i].y - locs[j].y;
                let expected = (-(dx * dx + dy * dy).sqrt()).exp();
                assert!((sigma[(i, j)] - expected).abs() < 1e-15);
                assert!(sigma[(i, j)] > 0.0 && sigma[(i, j)] <= 1.0);
            }
        }
    }

    #[test]
    fn duplicates_are_counted() {
        let locs = vec![
            Location::new(0.0, 0.0),
            Location::new(1.0, 0.0),
            Location::new(0.0, 0.0),
        ];
        assert_eq!(duplicate_pairs(&locs), 1);
        assert_eq!(duplicate_pairs(&make_grid(4, 1.0)), 0);
    }

    #[test]
    fn grid_layout() {
        assert_eq!(make_grid(1, 1.0), vec![Location::new(0.0, 0.0)]);
        let g = make_grid(2, 1.0);
        assert_eq!(g.len(), 4);
        let mut max = 0.0f64;
        for a in &g {
            for b in &g {
                max = max.max(mahalanobis_distance(a, b, &iso(1.0)));
            }
        }
        assert!((max - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(make_grid(15, 1.0).len(), 225);
        assert_eq!(g[1], Location::new(1.0, 0.0));
    }

    #[test]
    fn neighbors_on_a_line() {
        let locs: Vec<_> = (0..4).map(|i| Location::new(i as f64, 0.0)).collect();
        assert_eq!(
            nearest_neighbors(&locs, 3, &[0, 1, 2], 2, &iso(1.0)),
            vec![2, 1]
        );
        assert_eq!(
            nearest_neighbors(&locs, 3, &[0, 1, 2], 10, &iso(1.0)),
            vec![2, 1, 0]
        );
        assert!(nearest_neighbors(&locs, 3, &[], 3, &iso(1.0)).is_empty());
    }

    #[test]
    fn neighbors_of_grid_center() {
        let locs = make_grid(5, 1.0);
        let spec = iso(1.0);
        let candidates: Vec<usize> = (0..25).filter(|&i| i != 12).collect();
        let got = nearest_neighbors(&locs, 12, &candidates, 4, &spec);
        let mut oracle: Vec<(f64, usize)> = candidates
            .iter()
            .map(|&c| {
                (
                    ((locs[c].x - 2.0).powi(2) + (locs[c].y - 2.0).powi(2)).sqrt(),
                    c,
                )
            })
            .collect();
        oracle.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let expected: Vec<usize> = oracle[..4].iter().map(|p| p.1).collect();
        assert_eq!(got, expected);
        assert_eq!(got, vec![7, 11, 13, 17]);
    }
}
