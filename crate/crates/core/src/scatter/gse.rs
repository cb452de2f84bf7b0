use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{
    bisquare_psi, consistency_constant, gs_scale, s_estimator_complete, weight_calibration, LocationScatter,
    ScatterConfig,
};
use crate::error::{Error, Result};
use crate::linalg::{mad, median, symmetric_condition, Cholesky};
use crate::mask::Mask;

/// Tuning constant of the bisquare weights in the pairwise initializer.
const PAIRWISE_TUNING: f64 = 4.685;
/// Eigenvalue floor of the pairwise correlation, relative to the largest.
const EIGEN_FLOOR: f64 = 1e-3;

/// Rows sharing one missingness pattern.
struct Pattern {
    obs: Vec<usize>,
    mis: Vec<usize>,
    rows: Vec<usize>,
    c: f64,
    gamma: f64,
}

/// Per-pattern factorization of the current shape matrix.
struct PatternFactor {
    chol: Cholesky,
    /// `V_mo V_oo⁻¹`, row-major `|mis| × |obs|`.
    coef: Vec<f64>,
    /// `V_mm − V_mo V_oo⁻¹ V_om`, row-major.
    cond_cov: Vec<f64>,
}

fn factor_pattern(v: &DMatrix<f64>, p: &Pattern) -> Result<PatternFactor> {
    let ko = p.obs.len();
    let km = p.mis.len();
    let mut voo = Vec::with_capacity(ko * ko);
    for &a in &p.obs {
        for &b in &p.obs {
            voo.push(v[(a, b)]);
        }
    }
    let chol = Cholesky::factor(&voo, ko).ok_or_else(|| {
        let block = DMatrix::from_row_slice(ko, ko, &voo);
        Error::Singular {
            context: "observed scatter block".into(),
            condition: symmetric_condition(&block),
        }
    })?;
    let mut coef = vec![0.0; km * ko];
    let mut col = vec![0.0; ko];
    for (ai, &a) in p.mis.iter().enumerate() {
        for (bi, &b) in p.obs.iter().enumerate() {
            col[bi] = v[(b, a)];
        }
        chol.solve_in_place(&mut col);
        coef[ai * ko..(ai + 1) * ko].copy_from_slice(&col);
    }
    let mut cond_cov = vec![0.0; km * km];
    for (ai, &a) in p.mis.iter().enumerate() {
        for (bi, &b) in p.mis.iter().enumerate() {
            let mut acc = v[(a, b)];
            for (oi, &o) in p.obs.iter().enumerate() {
                acc -= coef[ai * ko + oi] * v[(o, b)];
            }
            cond_cov[ai * km + bi] = acc;
        }
    }
    Ok(PatternFactor { chol, coef, cond_cov })
}

fn group_patterns(u: &Mask, b: f64) -> Result<Vec<Pattern>> {
    let q = u.cols();
    let mut groups: BTreeMap<Vec<bool>, Vec<usize>> = BTreeMap::new();
    for i in 0..u.rows() {
        groups.entry(u.row(i).to_vec()).or_default().push(i);
    }
    let mut out = Vec::with_capacity(groups.len());
    // Reverse order puts the all-observed pattern first.
    for (key, rows) in groups.into_iter().rev() {
        let obs: Vec<usize> = (0..q).filter(|&j| key[j]).collect();
        let mis: Vec<usize> = (0..q).filter(|&j| !key[j]).collect();
        if obs.is_empty() {
            return Err(Error::invalid(format!("row {} has no observed coordinate", rows[0])));
        }
        let k = obs.len();
        out.push(Pattern {
            obs,
            mis,
            rows,
            c: consistency_constant(k, b)?,
            gamma: weight_calibration(k, b)?,
        });
    }
    Ok(out)
}

fn check_coverage(u: &Mask) -> Result<()> {
    let (n, q) = (u.rows(), u.cols());
    for a in 0..q {
        for b in a..q {
            let count = (0..n).filter(|&i| u.get(i, a) && u.get(i, b)).count();
            if count < 2 {
                return Err(if a == b {
                    Error::degenerate(format!("column {a} has fewer than two observed values"))
                } else {
                    Error::degenerate(format!("columns {a} and {b} are never jointly observed"))
                });
            }
        }
    }
    Ok(())
}

/// Coordinatewise median location and a pairwise bisquare-weighted
/// correlation, clipped to positive definiteness.
fn pairwise_start(z: &DMatrix<f64>, u: &Mask) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (n, q) = z.shape();
    let mut loc = DVector::zeros(q);
    let mut spread = DVector::zeros(q);
    for j in 0..q {
        let vals: Vec<f64> = (0..n).filter(|&i| u.get(i, j)).map(|i| z[(i, j)]).collect();
        loc[j] = median(&mut vals.clone());
        spread[j] = mad(&vals);
        if !(spread[j] > 0.0) {
            return Err(Error::degenerate(format!("column {j} has zero robust spread")));
        }
    }
    let std = DMatrix::from_fn(n, q, |i, j| (z[(i, j)] - loc[j]) / spread[j]);
    let wt = DMatrix::from_fn(n, q, |i, j| {
        let t = std[(i, j)] / PAIRWISE_TUNING;
        if u.get(i, j) && t.abs() < 1.0 {
            (1.0 - t * t).powi(2)
        } else {
            0.0
        }
    });
    let mut r = DMatrix::identity(q, q);
    for a in 0..q {
        for b in 0..a {
            let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
            for i in 0..n {
                let w = wt[(i, a)] * wt[(i, b)];
                if w > 0.0 {
                    sab += w * std[(i, a)] * std[(i, b)];
                    saa += w * std[(i, a)] * std[(i, a)];
                    sbb += w * std[(i, b)] * std[(i, b)];
                }
            }
            let rho = if saa > 0.0 && sbb > 0.0 {
                sab / (saa * sbb).sqrt()
            } else {
                0.0
            };
            r[(a, b)] = rho;
            r[(b, a)] = rho;
        }
    }
    let eig = SymmetricEigen::new(r);
    let top = eig.eigenvalues.max();
    let clipped = eig.eigenvalues.map(|l| l.max(EIGEN_FLOOR * top));
    let r = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    let d = DMatrix::from_diagonal(&spread);
    let s = &d * r * &d;
    Ok((loc, (&s + s.transpose()) * 0.5))
}

fn unit_det(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let q = s.nrows();
    let flat: Vec<f64> = (0..q * q).map(|k| s[(k / q, k % q)]).collect();
    let ch = Cholesky::factor(&flat, q).ok_or_else(|| Error::Singular {
        context: "scatter update".into(),
        condition: symmetric_condition(s),
    })?;
    Ok(s / (ch.log_det() / q as f64).exp())
}

struct Sweep {
    /// Squared distances under the shape `V`, indexed by case.
    d: Vec<f64>,
    scale: f64,
    factors: Vec<PatternFactor>,
}

fn sweep(
    z: &DMatrix<f64>,
    patterns: &[Pattern],
    m: &DVector<f64>,
    v: &DMatrix<f64>,
    c_case: &[f64],
    b: f64,
) -> Result<Sweep> {
    let n = z.nrows();
    let mut d = vec![0.0; n];
    let mut factors = Vec::with_capacity(patterns.len());
    for p in patterns {
        let f = factor_pattern(v, p)?;
        let ko = p.obs.len();
        let mut r = vec![0.0; ko];
        let mut scratch = vec![0.0; ko];
        for &i in &p.rows {
            for (ri, &o) in r.iter_mut().zip(&p.obs) {
                *ri = z[(i, o)] - m[o];
            }
            d[i] = f.chol.quadratic_form(&r, &mut scratch);
        }
        factors.push(f);
    }
    let scale = gs_scale(&d, c_case, b)?;
    Ok(Sweep { d, scale, factors })
}

/// Generalized S-estimator of location and scatter for data whose missing
/// cells are marked `false` in `u`.
///
/// Starts from the complete-case S-estimate when enough complete cases exist
/// (otherwise from a pairwise robust start) and alternates partial distances,
/// the generalized S-scale, and weighted conditional-expectation updates of
/// location and shape. Returns `converged = false` rather than failing when
/// `max_iter` is reached.
pub fn gse(z: &DMatrix<f64>, u: &Mask, cfg: &ScatterConfig, seed: u64) -> Result<LocationScatter> {
    cfg.validate()?;
    let (n, q) = z.shape();
    if n == 0 || q == 0 {
        return Err(Error::EmptySample);
    }
    if u.rows() != n || u.cols() != q {
        return Err(Error::invalid("mask shape does not match the data"));
    }
    if u.is_all_observed() {
        return s_estimator_complete(z, cfg, seed);
    }
    for i in 0..n {
        for j in 0..q {
            if u.get(i, j) && !z[(i, j)].is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
        }
    }
    check_coverage(u)?;
    let b = cfg.breakdown;
    let patterns = group_patterns(u, b)?;
    let mut c_case = vec![0.0; n];
    let mut gamma_case = vec![0.0; n];
    for p in &patterns {
        for &i in &p.rows {
            c_case[i] = p.c;
            gamma_case[i] = p.gamma;
        }
    }

    let complete: Vec<usize> = (0..n).filter(|&i| u.row_complete(i)).collect();
    let (mut m, start) = if complete.len() >= (2 * q).max(n.div_ceil(2)) {
        let sub = z.select_rows(complete.iter());
        let fit = s_estimator_complete(&sub, cfg, seed)?;
        (fit.location, fit.scatter)
    } else {
        pairwise_start(z, u)?
    };
    let mut v = unit_det(&start)?;

    let mut current = sweep(z, &patterns, &m, &v, &c_case, b)?;
    let mut converged = false;
    let mut iterations = 0;
    let mut xhat = vec![0.0; q];
    for iter in 1..=cfg.max_iter {
        iterations = iter;
        let s = current.scale;
        let w: Vec<f64> = (0..n).map(|i| bisquare_psi(current.d[i] / (c_case[i] * s))).collect();
        let total: f64 = w.iter().sum();
        if !(total > 0.0) {
            return Err(Error::degenerate("all cases received zero weight"));
        }

        // Location: weighted mean of the conditional expectations.
        let mut m_new = DVector::zeros(q);
        let mut fills: Vec<Vec<f64>> = vec![Vec::new(); n];
        for (p, f) in patterns.iter().zip(&current.factors) {
            let ko = p.obs.len();
            for &i in &p.rows {
                let mut fill = Vec::with_capacity(p.mis.len());
                for ai in 0..p.mis.len() {
                    let mut acc = m[p.mis[ai]];
                    for (oi, &o) in p.obs.iter().enumerate() {
                        acc += f.coef[ai * ko + oi] * (z[(i, o)] - m[o]);
                    }
                    fill.push(acc);
                }
                for &o in &p.obs {
                    m_new[o] += w[i] * z[(i, o)];
                }
                for (ai, &a) in p.mis.iter().enumerate() {
                    m_new[a] += w[i] * fill[ai];
                }
                fills[i] = fill;
            }
        }
        m_new /= total;

        // Shape: calibrated weighted outer products plus conditional covariances.
        let mut acc = DMatrix::<f64>::zeros(q, q);
        for (p, f) in patterns.iter().zip(&current.factors) {
            let km = p.mis.len();
            for &i in &p.rows {
                for &o in &p.obs {
                    xhat[o] = z[(i, o)] - m_new[o];
                }
                for (ai, &a) in p.mis.iter().enumerate() {
                    xhat[a] = fills[i][ai] - m_new[a];
                }
                let wi = w[i] / gamma_case[i];
                if wi > 0.0 {
                    for a in 0..q {
                        let wa = wi * xhat[a];
                        for bb in 0..=a {
                            acc[(a, bb)] += wa * xhat[bb];
                        }
                    }
                }
            }
            if km > 0 {
                let count = p.rows.len() as f64 * s;
                for (ai, &a) in p.mis.iter().enumerate() {
                    for (bi, &bb) in p.mis.iter().enumerate() {
                        if bb <= a {
                            acc[(a, bb)] += count * f.cond_cov[ai * km + bi];
                        }
                    }
                }
            }
        }
        for a in 0..q {
            for bb in 0..a {
                acc[(bb, a)] = acc[(a, bb)];
            }
        }
        acc /= n as f64;

        let v_new = unit_det(&acc)?;
        let next = sweep(z, &patterns, &m_new, &v_new, &c_case, b)?;
        let change = next
            .d
            .iter()
            .zip(&current.d)
            .map(|(&dn, &dold)| {
                let (dn, dold) = (dn / next.scale, dold / current.scale);
                (dn - dold).abs() / (1.0 + dold)
            })
            .fold(0.0, f64::max);
        m = m_new;
        v = v_new;
        current = next;
        if change < cfg.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("generalized S-estimator stopped after {iterations} iterations without converging");
    }

    let s = current.scale;
    let scatter = &v * s;
    let scatter = (&scatter + scatter.transpose()) * 0.5;
    let case_distances: Vec<f64> = current.d.iter().map(|d| d / s).collect();
    let case_weights = case_distances
        .iter()
        .zip(&c_case)
        .map(|(&d, &c)| bisquare_psi(d / c) / 3.0)
        .collect();
    let mut case_dims = vec![0; n];
    for p in &patterns {
        for &i in &p.rows {
            case_dims[i] = p.obs.len();
        }
    }
    Ok(LocationScatter {
        location: m,
        scatter,
        gs_scale: s,
        case_distances,
        case_dims,
        case_weights,
        converged,
        iterations,
        breakdown: b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal(n: usize, q: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, q, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn complete_mask_delegates() {
        let z = normal(100, 3, 1);
        let cfg = ScatterConfig::default();
        let a = gse(&z, &Mask::all_observed(100, 3), &cfg, 9).unwrap();
        let b = s_estimator_complete(&z, &cfg, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mcar_column_recovers_identity() {
        let z = normal(2000, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = Mask::from_fn(2000, 3, |_, j| !(j == 1 && rng.gen::<f64>() < 0.05));
        let fit = gse(&z, &u, &ScatterConfig::default(), 4).unwrap();
        assert!(fit.converged);
        assert!(fit.location.amax() < 0.1);
        assert!(
            (&fit.scatter - DMatrix::identity(3, 3)).amax() < 0.15,
            "{}",
            fit.scatter
        );
        assert!(fit.constraint_residual().abs() < 1e-8);
    }

    #[test]
    fn unobserved_columns_are_degenerate() {
        let z = normal(50, 3, 5);
        let u = Mask::from_fn(50, 3, |_, j| j == 0);
        assert!(matches!(
            gse(&z, &u, &ScatterConfig::default(), 1),
            Err(Error::DegenerateDesign(_))
        ));
    }

    #[test]
    fn pairwise_start_when_few_complete_rows() {
        let z = normal(400, 3, 6);
        // Two thirds of rows miss one coordinate each.
        let u = Mask::from_fn(400, 3, |i, j| i % 3 == 0 || i % 3 != j + 1);
        let fit = gse(&z, &u, &ScatterConfig::default(), 2).unwrap();
        assert!(fit.location.amax() < 0.2);
        assert!((&fit.scatter - DMatrix::identity(3, 3)).amax() < 0.3, "{}", fit.scatter);
    }
}
