//! Robust multivariate location and scatter.
//!
//! Complete data go through a bisquare S-estimator found by elemental
//! subsampling and concentration steps. Data with missing cells go through a
//! generalized S-estimator that combines partial Mahalanobis distances, a
//! dimension-aware scale and EM-style conditional-expectation updates. With
//! no missing cell the generalized estimator delegates to the complete-data
//! one, so both paths agree bit for bit.

mod constants;
mod gse;
mod rho;
mod sest;

pub use constants::{
    consistency_constant, consistency_constant_with_grid, expected_rho, expected_rho_closed_form, weight_calibration,
    DEFAULT_INTERVALS,
};
pub use gse::gse;
pub use rho::{bisquare_psi, bisquare_psi_prime, bisquare_rho, rho_eval, RhoFunction};
pub use sest::s_estimator_complete;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{select, select_vec, symmetric_condition, to_row_major, Cholesky};

/// Tuning of the S and generalized S estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterConfig {
    /// Breakdown point `b` of the scale equation.
    pub breakdown: f64,
    pub rho: RhoFunction,
    /// Number of elemental starts.
    pub subsamples: usize,
    /// Concentration steps applied to every start.
    pub concentration_steps: usize,
    /// Starts carried to full convergence.
    pub best_candidates: usize,
    pub max_iter: usize,
    /// Tolerance on the largest change of the squared distances, relative to `1 + d`.
    pub tol: f64,
}

impl Default for ScatterConfig {
    fn default() -> Self {
        ScatterConfig {
            breakdown: 0.5,
            rho: RhoFunction::TukeyBisquare,
            subsamples: 500,
            concentration_steps: 2,
            best_candidates: 10,
            max_iter: 200,
            tol: 1e-7,
        }
    }
}

impl ScatterConfig {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.rho != RhoFunction::TukeyBisquare {
            return Err(Error::invalid("scatter estimation requires the bisquare rho"));
        }
        if !(self.breakdown > 0.0 && self.breakdown <= 0.5) {
            return Err(Error::invalid(format!("breakdown {} outside (0, 0.5]", self.breakdown)));
        }
        if self.subsamples == 0 || self.best_candidates == 0 || self.max_iter == 0 {
            return Err(Error::invalid(
                "subsamples, best_candidates and max_iter must be positive",
            ));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tolerance must be positive"));
        }
        Ok(())
    }
}

/// Robust location and scatter with per-case diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationScatter {
    pub location: DVector<f64>,
    pub scatter: DMatrix<f64>,
    /// Scale absorbed into `scatter`: `scatter = gs_scale · V` with `det V = 1`.
    pub gs_scale: f64,
    /// Partial squared Mahalanobis distances under `(location, scatter)`.
    pub case_distances: Vec<f64>,
    /// Observed dimension of every case.
    pub case_dims: Vec<usize>,
    /// `ρ′_B(d/c_k)/3`, in `[0, 1]`.
    pub case_weights: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub breakdown: f64,
}

impl LocationScatter {
    pub fn dim(&self) -> usize {
        self.location.len()
    }

    /// `(1/n)Σ c_k ρ(d_i/c_k) − b·(1/n)Σ c_k`; zero when the scale equation holds.
    pub fn constraint_residual(&self) -> f64 {
        let n = self.case_distances.len() as f64;
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        for (&d, &k) in self.case_distances.iter().zip(&self.case_dims) {
            let c = consistency_constant(k, self.breakdown).expect("valid dimension");
            lhs += c * bisquare_rho(d / c);
            rhs += c;
        }
        (lhs - self.breakdown * rhs) / n
    }
}

/// Squared Mahalanobis distance of the observed coordinates of `z`
/// (`u[j] = true`) under the matching blocks of `(m, s)`. Returns the distance
/// and the number of observed coordinates.
pub fn partial_mahalanobis(z: &DVector<f64>, u: &[bool], m: &DVector<f64>, s: &DMatrix<f64>) -> Result<(f64, usize)> {
    let q = z.len();
    if u.len() != q || m.len() != q || s.shape() != (q, q) {
        return Err(Error::invalid("dimension mismatch in partial distance"));
    }
    let obs: Vec<usize> = (0..q).filter(|&j| u[j]).collect();
    if obs.is_empty() {
        return Err(Error::invalid("no observed coordinate"));
    }
    let soo = select(s, &obs, &obs);
    let ch = Cholesky::factor(&to_row_major(&soo), obs.len()).ok_or_else(|| Error::Singular {
        context: "observed scatter block".into(),
        condition: symmetric_condition(&soo),
    })?;
    let r = select_vec(z, &obs) - select_vec(m, &obs);
    let mut scratch = vec![0.0; obs.len()];
    Ok((ch.quadratic_form(r.as_slice(), &mut scratch), obs.len()))
}

/// Generalized S-scale: the root `s` of `Σ c_i ρ(d_i/(c_i s)) = b·Σ c_i`.
///
/// The left side is nonincreasing in `s`; the root is bracketed on
/// `[1e-12, 1e6]·s0` and refined by Illinois steps in `log s`.
pub(crate) fn gs_scale(d: &[f64], c: &[f64], b: f64) -> Result<f64> {
    let total: f64 = c.iter().sum();
    let target = b * total;
    let f = |s: f64| -> f64 {
        let mut acc = 0.0;
        for (&di, &ci) in d.iter().zip(c) {
            acc += ci * bisquare_rho(di / (ci * s));
        }
        acc - target
    };
    let mut ratios: Vec<f64> = d.iter().zip(c).map(|(&di, &ci)| di / ci).collect();
    let s0 = crate::linalg::median(&mut ratios);
    let s0 = if s0 > 0.0 && s0.is_finite() {
        s0
    } else {
        let max = d.iter().zip(c).map(|(&di, &ci)| di / ci).fold(0.0, f64::max);
        if !(max > 0.0) {
            return Err(Error::degenerate("all distances are zero (exact fit)"));
        }
        max
    };
    let (mut a, mut z) = ((1e-12 * s0).ln(), (1e6 * s0).ln());
    let mut fa = f(a.exp());
    let mut fz = f(z.exp());
    if fa < 0.0 {
        return Err(Error::degenerate(
            "more than a breakdown fraction of cases at zero distance (exact fit)",
        ));
    }
    if fa == 0.0 {
        return Ok(a.exp());
    }
    if fz > 0.0 {
        return Err(Error::Internal("scale bracket failed to enclose the root".into()));
    }
    let mut side = 0i8;
    for _ in 0..300 {
        if z - a < 1e-14 {
            break;
        }
        let mut x = (a * fz - z * fa) / (fz - fa);
        if !(x > a && x < z) {
            x = 0.5 * (a + z);
        }
        let fx = f(x.exp());
        if fx == 0.0 {
            return Ok(x.exp());
        }
        if fx > 0.0 {
            a = x;
            fa = fx;
            if side == 1 {
                fz *= 0.5;
            }
            side = 1;
        } else {
            z = x;
            fz = fx;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        }
    }
    Ok((0.5 * (a + z)).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_distance_examples() {
        let m = DVector::zeros(2);
        let s = DMatrix::identity(2, 2);
        let (d, k) = partial_mahalanobis(&DVector::from_vec(vec![1.0, 0.0]), &[true, true], &m, &s).unwrap();
        assert_eq!((d, k), (1.0, 2));
        let (d, k) = partial_mahalanobis(&DVector::from_vec(vec![3.0, 999.0]), &[true, false], &m, &s).unwrap();
        assert_eq!((d, k), (9.0, 1));
        assert!(partial_mahalanobis(&DVector::from_vec(vec![3.0, 1.0]), &[false, false], &m, &s).is_err());
    }

    #[test]
    fn singular_block_reports_condition() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let r = partial_mahalanobis(&DVector::zeros(2), &[true, true], &DVector::zeros(2), &s);
        assert!(matches!(r, Err(Error::Singular { .. })));
    }

    #[test]
    fn scale_root_satisfies_equation() {
        let d: Vec<f64> = (1..=50).map(|i| (i as f64 * 0.37).powi(2)).collect();
        let c = vec![consistency_constant(3, 0.5).unwrap(); 50];
        let s = gs_scale(&d, &c, 0.5).unwrap();
        let lhs: f64 = d.iter().zip(&c).map(|(di, ci)| ci * bisquare_rho(di / (ci * s))).sum();
        let rhs: f64 = 0.5 * c.iter().sum::<f64>();
        assert!((lhs - rhs).abs() / rhs < 1e-10);
    }

    #[test]
    fn exact_fit_is_reported() {
        let mut d = vec![0.0; 10];
        d[0] = 1.0;
        let c = vec![1.0; 10];
        assert!(matches!(gs_scale(&d, &c, 0.5), Err(Error::DegenerateDesign(_))));
    }
}
