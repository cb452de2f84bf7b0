use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dist::{norm_cdf, norm_quantile, Marginal};
use crate::error::{Error, Result};
use crate::linalg::symmetric_condition;

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with the
/// signs of `R`'s diagonal folded into `Q`).
fn random_orthogonal<R: Rng + ?Sized>(p: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(p, p, |_, _| gaussian(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..p {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

fn correlation_for_spread(q: &DMatrix<f64>, u: &[f64], log_spread: f64) -> DMatrix<f64> {
    let p = q.nrows();
    let lambda = DVector::from_fn(p, |i, _| (log_spread * u[i]).exp());
    let cov = q * DMatrix::from_diagonal(&lambda) * q.transpose();
    let mut r = DMatrix::from_fn(p, p, |i, j| cov[(i, j)] / (cov[(i, i)] * cov[(j, j)]).sqrt());
    for i in 0..p {
        r[(i, i)] = 1.0;
    }
    (&r + r.transpose()) * 0.5
}

/// Random correlation matrix with 2-norm condition number close to
/// `condition_number`.
///
/// The extreme eigenvalues are 1 and `condition_number`, the interior ones
/// uniform between them. They are raised to a common power, rotated by a
/// random orthogonal basis and rescaled to unit diagonal; the power is
/// bisected so the rescaled matrix hits the target condition number.
pub fn random_correlation<R: Rng + ?Sized>(p: usize, condition_number: f64, rng: &mut R) -> Result<DMatrix<f64>> {
    if p < 2 {
        return Err(Error::invalid("random correlation needs p ≥ 2"));
    }
    if !(condition_number > 1.0) {
        return Err(Error::invalid("condition number must exceed 1"));
    }
    if p == 2 {
        let rho = (condition_number - 1.0) / (condition_number + 1.0);
        let rho = if rng.gen_bool(0.5) { rho } else { -rho };
        return Ok(DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]));
    }
    let q = random_orthogonal(p, rng);
    let target = condition_number.ln();
    let mut u: Vec<f64> = (0..p)
        .map(|i| match i {
            0 => 0.0,
            _ if i == p - 1 => 1.0,
            _ => rng.gen_range(1.0..condition_number).ln() / target,
        })
        .collect();
    u.sort_by(f64::total_cmp);
    let cond = |s: f64| symmetric_condition(&correlation_for_spread(&q, &u, s)).ln();
    let mut lo = 0.0;
    let mut hi = target;
    while cond(hi) < target {
        lo = hi;
        hi *= 1.5;
        if hi > 200.0 {
            return Err(Error::Internal("condition number target unreachable".into()));
        }
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if cond(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-10 {
            break;
        }
    }
    Ok(correlation_for_spread(&q, &u, 0.5 * (lo + hi)))
}

/// `R·b` with `b` uniform on the unit sphere.
pub fn random_beta<R: Rng + ?Sized>(p: usize, radius: f64, rng: &mut R) -> DVector<f64> {
    loop {
        let b = DVector::from_fn(p, |_, _| gaussian(rng));
        let norm = b.norm();
        if norm > 0.0 {
            return b * (radius / norm);
        }
    }
}

/// Marginals of the non-normal covariate design, in blocks of three columns.
pub fn nonnormal_marginal(j: usize) -> Marginal {
    match (j / 3) % 5 {
        0 => Marginal::StandardNormal,
        1 => Marginal::ChiSquared { df: 20.0 },
        2 => Marginal::FisherF { df1: 90.0, df2: 10.0 },
        3 => Marginal::ChiSquared { df: 1.0 },
        _ => Marginal::Pareto { scale: 1.0, shape: 3.0 },
    }
}

/// Draw `n` rows from `N(0, sigma)`.
pub fn multivariate_normal<R: Rng + ?Sized>(n: usize, sigma: &DMatrix<f64>, rng: &mut R) -> Result<DMatrix<f64>> {
    let p = sigma.nrows();
    let l = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular {
            context: "simulation covariance".into(),
            condition: symmetric_condition(sigma),
        })?
        .l();
    let z = DMatrix::from_fn(n, p, |_, _| gaussian(rng));
    Ok(z * l.transpose())
}

/// `G⁻¹(Φ(x))` applied to every entry of column `j`.
pub fn transform_column(x: &mut DMatrix<f64>, j: usize, law: Marginal) {
    if law == Marginal::StandardNormal {
        return;
    }
    for i in 0..x.nrows() {
        x[(i, j)] = law.quantile(norm_cdf(x[(i, j)]));
    }
}

/// `D_ij = 1{latent_ij ≤ Φ⁻¹(π_j)}`.
pub fn dichotomize(latent: &DMatrix<f64>, thresholds: &[f64]) -> Result<DMatrix<f64>> {
    if latent.ncols() != thresholds.len() {
        return Err(Error::invalid("one threshold per latent column is required"));
    }
    if thresholds.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::invalid("thresholds must be probabilities"));
    }
    let cut: Vec<f64> = thresholds.iter().map(|&p| norm_quantile(p)).collect();
    Ok(DMatrix::from_fn(latent.nrows(), latent.ncols(), |i, j| {
        (latent[(i, j)] <= cut[j]) as u8 as f64
    }))
}

/// Eigenvector of the smallest eigenvalue of `sigma`, scaled so that
/// `vᵀ Σ⁻¹ v = 1`.
pub fn least_favorable_direction(sigma: &DMatrix<f64>) -> DVector<f64> {
    let eig = SymmetricEigen::new(sigma.clone());
    let (idx, lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &l)| if l < acc.1 { (i, l) } else { acc });
    let v = eig.eigenvectors.column(idx).normalize();
    v * lambda.sqrt()
}
