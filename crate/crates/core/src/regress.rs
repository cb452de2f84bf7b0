//! Plug-in regression from a robust location/scatter estimate, with
//! sandwich-type inference.
//!
//! For `Z = (X, y)` with location `m = (m_x, m_y)` and scatter `S`
//! partitioned accordingly, the slopes are `β = S_xx⁻¹ S_xy` and the intercept
//! is `α = m_y − m_xᵀ β`.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::dist::{norm_quantile, two_sided_p_value};
use crate::error::{Error, Result};
use crate::filter::{filter_matrix, FilterReport, DEFAULT_ALPHA, DEFAULT_XI};
use crate::linalg::{general_inverse, select, spd_solve, symmetrize, to_row_major, Cholesky};
use crate::mask::Mask;
use crate::scatter::{
    bisquare_psi, bisquare_psi_prime, consistency_constant, gse, s_estimator_complete, LocationScatter, ScatterConfig,
};

pub const DEFAULT_TAU: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Filter, generalized S-estimate, plug-in.
    ThreeStep,
    /// S-estimate of the complete data, plug-in.
    TwoStep,
    LeastSquares,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::ThreeStep => "3S",
            Method::TwoStep => "2S",
            Method::LeastSquares => "LS",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Blocks of a `(p+1)`-dimensional location/scatter with the response last.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedMoments {
    pub m_x: DVector<f64>,
    pub m_y: f64,
    pub s_xx: DMatrix<f64>,
    pub s_xy: DVector<f64>,
    pub s_yy: f64,
}

impl PartitionedMoments {
    pub fn new(location: &DVector<f64>, scatter: &DMatrix<f64>) -> Result<Self> {
        let q = location.len();
        if q < 2 || scatter.shape() != (q, q) {
            return Err(Error::invalid(
                "moments need at least one covariate and a matching scatter",
            ));
        }
        let p = q - 1;
        Ok(PartitionedMoments {
            m_x: location.rows(0, p).into_owned(),
            m_y: location[p],
            s_xx: scatter.view((0, 0), (p, p)).into_owned(),
            s_xy: scatter.view((0, p), (p, 1)).column(0).into_owned(),
            s_yy: scatter[(p, p)],
        })
    }

    /// `σ² = S_yy − βᵀ S_xx β` for given slopes.
    pub fn residual_variance(&self, beta: &DVector<f64>) -> f64 {
        self.s_yy - (beta.transpose() * &self.s_xx * beta)[(0, 0)]
    }
}

/// `β = S_xx⁻¹ S_xy`, `α = m_y − m_xᵀ β`.
pub fn plug_in_coefficients(moments: &PartitionedMoments) -> Result<(f64, DVector<f64>)> {
    let beta = spd_solve(&moments.s_xx, &moments.s_xy, "covariate scatter block")?;
    let alpha = moments.m_y - moments.m_x.dot(&beta);
    Ok((alpha, beta))
}

/// Options shared by the fitting routines.
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub alpha_filter: f64,
    pub xi: f64,
    pub tau: f64,
    pub scatter: ScatterConfig,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            alpha_filter: DEFAULT_ALPHA,
            xi: DEFAULT_XI,
            tau: DEFAULT_TAU,
            scatter: ScatterConfig::default(),
            seed: 0,
        }
    }
}

impl FitOptions {
    fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::invalid(format!("tau {} outside (0, 1)", self.tau)));
        }
        Ok(())
    }
}

/// A fitted regression with inference. Coefficient vectors are ordered
/// `(intercept, slope_1, …, slope_p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionFit {
    pub method: Method,
    pub intercept: f64,
    pub slopes: DVector<f64>,
    pub sigma_eps: f64,
    /// Estimated asymptotic covariance of `√n (θ̂ − θ)`.
    pub asv: DMatrix<f64>,
    pub std_errors: DVector<f64>,
    pub ci_lower: DVector<f64>,
    pub ci_upper: DVector<f64>,
    pub p_values: DVector<f64>,
    pub tau: f64,
    pub n: usize,
    pub scatter: Option<LocationScatter>,
    pub filter_report: Option<FilterReport>,
}

impl RegressionFit {
    pub fn coefficients(&self) -> DVector<f64> {
        let mut theta = DVector::zeros(self.slopes.len() + 1);
        theta[0] = self.intercept;
        theta.rows_mut(1, self.slopes.len()).copy_from(&self.slopes);
        theta
    }

    pub fn ci_half_width(&self, j: usize) -> f64 {
        0.5 * (self.ci_upper[j] - self.ci_lower[j])
    }
}

fn check_inputs(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
    let (n, p) = x.shape();
    if n == 0 || p == 0 {
        return Err(Error::EmptySample);
    }
    if y.len() != n {
        return Err(Error::invalid(format!("response has {} rows, covariates {n}", y.len())));
    }
    for j in 0..p {
        for i in 0..n {
            if !x[(i, j)].is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
        }
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { row: i, col: p });
    }
    Ok(())
}

fn join(x: &DMatrix<f64>, y: &DVector<f64>) -> DMatrix<f64> {
    let (n, p) = x.shape();
    let mut z = DMatrix::zeros(n, p + 1);
    z.view_mut((0, 0), (n, p)).copy_from(x);
    z.set_column(p, y);
    z
}

/// Standard errors, intervals and p-values from an ASV estimate.
fn inference(
    theta: &DVector<f64>,
    asv: &DMatrix<f64>,
    n: usize,
    tau: f64,
) -> (DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>) {
    let z = norm_quantile(1.0 - tau / 2.0);
    let k = theta.len();
    let se = DVector::from_fn(k, |j, _| (asv[(j, j)].max(0.0) / n as f64).sqrt());
    let lower = DVector::from_fn(k, |j, _| theta[j] - z * se[j]);
    let upper = DVector::from_fn(k, |j, _| theta[j] + z * se[j]);
    let pv = DVector::from_fn(k, |j, _| {
        let stat = if se[j] > 0.0 {
            theta[j] / se[j]
        } else if theta[j] == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        two_sided_p_value(stat)
    });
    (se, lower, upper, pv)
}

/// Fill filtered cells of `x` (`u[i][j] = false`) with their conditional
/// mean under `(m, s)`; observed cells are copied. A row with every cell
/// filtered is set to `m`. Returns the imputed matrix and the number of such
/// fully filtered rows.
pub fn impute_blp(x: &DMatrix<f64>, u: &Mask, m: &DVector<f64>, s: &DMatrix<f64>) -> Result<(DMatrix<f64>, usize)> {
    let (n, p) = x.shape();
    if u.rows() != n || u.cols() != p || m.len() != p || s.shape() != (p, p) {
        return Err(Error::invalid("dimension mismatch in imputation"));
    }
    let mut out = x.clone();
    let mut empty_rows = 0;
    let mut groups: std::collections::BTreeMap<Vec<bool>, Vec<usize>> = Default::default();
    for i in 0..n {
        if !u.row_complete(i) {
            groups.entry(u.row(i).to_vec()).or_default().push(i);
        }
    }
    for (key, rows) in groups {
        let obs: Vec<usize> = (0..p).filter(|&j| key[j]).collect();
        let mis: Vec<usize> = (0..p).filter(|&j| !key[j]).collect();
        if obs.is_empty() {
            log::warn!(
                "{} rows have every covariate filtered; imputed by the location",
                rows.len()
            );
            empty_rows += rows.len();
            for &i in &rows {
                for j in 0..p {
                    out[(i, j)] = m[j];
                }
            }
            continue;
        }
        let soo = select(s, &obs, &obs);
        let ch = Cholesky::factor(&to_row_major(&soo), obs.len()).ok_or_else(|| Error::Singular {
            context: "observed covariate block".into(),
            condition: crate::linalg::symmetric_condition(&soo),
        })?;
        let smo = select(s, &mis, &obs);
        let mut r = vec![0.0; obs.len()];
        for &i in &rows {
            for (k, &o) in obs.iter().enumerate() {
                r[k] = x[(i, o)] - m[o];
            }
            ch.solve_in_place(&mut r);
            for (a, &j) in mis.iter().enumerate() {
                let mut v = m[j];
                for k in 0..obs.len() {
                    v += smo[(a, k)] * r[k];
                }
                out[(i, j)] = v;
            }
        }
    }
    Ok((out, empty_rows))
}

fn design(xhat: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = xhat.shape();
    let mut xt = DMatrix::from_element(n, p + 1, 1.0);
    xt.view_mut((0, 1), (n, p)).copy_from(xhat);
    xt
}

/// Plug-in estimate of the asymptotic covariance `C⁻¹ D C⁻¹` of the
/// regression coefficients derived from `(m, s)`.
///
/// Filtered covariate cells are replaced by their best linear prediction
/// given the observed entries of the case, response included; distances
/// are computed on the completed cases. `sigma2` is `S_yy − βᵀ S_xx β`.
#[allow(clippy::too_many_arguments)]
pub fn asv_estimate(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    u: &Mask,
    m: &DVector<f64>,
    s: &DMatrix<f64>,
    theta: &DVector<f64>,
    sigma2: f64,
    breakdown: f64,
) -> Result<DMatrix<f64>> {
    let (n, p) = x.shape();
    let q = p + 1;
    if m.len() != q || s.shape() != (q, q) || theta.len() != q || y.len() != n {
        return Err(Error::invalid("dimension mismatch in covariance estimate"));
    }
    if !(sigma2 > 0.0) {
        return Err(Error::NonPositiveResidualVariance(sigma2));
    }
    let (zhat, _) = impute_blp(&join(x, y), &u.with_observed_column(), m, s)?;
    let xhat = zhat.columns(0, p).into_owned();
    let xt = design(&xhat);
    let c = consistency_constant(q, breakdown)?;
    let ch = Cholesky::factor(&to_row_major(s), q).ok_or_else(|| Error::Singular {
        context: "scatter".into(),
        condition: crate::linalg::symmetric_condition(s),
    })?;
    let mut zc = vec![0.0; q];
    let mut scratch = vec![0.0; q];
    let mut cmat = DMatrix::zeros(q, q);
    let mut dmat = DMatrix::zeros(q, q);
    for i in 0..n {
        for j in 0..p {
            zc[j] = xhat[(i, j)] - m[j];
        }
        zc[p] = y[i] - m[p];
        let d = ch.quadratic_form(&zc, &mut scratch);
        let w = bisquare_psi(d / c);
        let dw = bisquare_psi_prime(d / c) / c;
        let row = xt.row(i);
        let r = y[i] - row.dot(&theta.transpose());
        let a = w + 2.0 / sigma2 * dw * r * r;
        let bcoef = w * w * r * r;
        if a == 0.0 && bcoef == 0.0 {
            continue;
        }
        let outer = row.transpose() * row;
        cmat += outer.clone() * a;
        dmat += outer * bcoef;
    }
    cmat /= n as f64;
    dmat /= n as f64;
    let cinv = general_inverse(&symmetrize(&cmat), "sandwich bread matrix")?;
    Ok(symmetrize(&(&cinv * dmat * &cinv)))
}

fn finish_robust(
    method: Method,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    u: &Mask,
    scatter: LocationScatter,
    report: Option<FilterReport>,
    opts: &FitOptions,
) -> Result<RegressionFit> {
    let moments = PartitionedMoments::new(&scatter.location, &scatter.scatter)?;
    let (alpha, beta) = plug_in_coefficients(&moments)?;
    let sigma2 = moments.residual_variance(&beta);
    if !(sigma2 > 0.0) {
        return Err(Error::NonPositiveResidualVariance(sigma2));
    }
    let mut theta = DVector::zeros(beta.len() + 1);
    theta[0] = alpha;
    theta.rows_mut(1, beta.len()).copy_from(&beta);
    let asv = asv_estimate(
        x,
        y,
        u,
        &scatter.location,
        &scatter.scatter,
        &theta,
        sigma2,
        scatter.breakdown,
    )?;
    let n = x.nrows();
    let (se, lo, hi, pv) = inference(&theta, &asv, n, opts.tau);
    Ok(RegressionFit {
        method,
        intercept: alpha,
        slopes: beta,
        sigma_eps: sigma2.sqrt(),
        asv,
        std_errors: se,
        ci_lower: lo,
        ci_upper: hi,
        p_values: pv,
        tau: opts.tau,
        n,
        scatter: Some(scatter),
        filter_report: report,
    })
}

/// Filter the covariates, estimate location and scatter of the filtered data
/// with the generalized S-estimator, and plug in. The response is never
/// filtered.
pub fn fit_3s(x: &DMatrix<f64>, y: &DVector<f64>, opts: &FitOptions) -> Result<RegressionFit> {
    opts.validate()?;
    check_inputs(x, y)?;
    let (n, p) = x.shape();
    if n <= 2 * (p + 1) {
        return Err(Error::invalid(format!(
            "need more than {} cases for {p} covariates, got {n}",
            2 * (p + 1)
        )));
    }
    let report = filter_matrix(x, opts.alpha_filter, opts.xi)?;
    let u = report.effective_flags.with_observed_column();
    let z = join(x, y);
    let scatter = gse(&z, &u, &opts.scatter, opts.seed)?;
    let ux = report.effective_flags.clone();
    finish_robust(Method::ThreeStep, x, y, &ux, scatter, Some(report), opts)
}

/// S-estimate of the joint data, then plug in.
pub fn fit_2s(x: &DMatrix<f64>, y: &DVector<f64>, opts: &FitOptions) -> Result<RegressionFit> {
    opts.validate()?;
    check_inputs(x, y)?;
    let (n, p) = x.shape();
    if n <= 2 * (p + 1) {
        return Err(Error::invalid(format!(
            "need more than {} cases for {p} covariates, got {n}",
            2 * (p + 1)
        )));
    }
    let z = join(x, y);
    let scatter = s_estimator_complete(&z, &opts.scatter, opts.seed)?;
    let u = Mask::all_observed(n, p);
    finish_robust(Method::TwoStep, x, y, &u, scatter, None, opts)
}

/// Ordinary least squares through the plug-in of the sample moments, with
/// the classical covariance `σ̂²(X̃ᵀX̃)⁻¹` (scaled by `n`) for inference.
pub fn fit_ls(x: &DMatrix<f64>, y: &DVector<f64>, tau: f64) -> Result<RegressionFit> {
    check_inputs(x, y)?;
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::invalid(format!("tau {tau} outside (0, 1)")));
    }
    let (n, p) = x.shape();
    if n <= p + 1 {
        return Err(Error::invalid(format!(
            "need more than {} cases for least squares",
            p + 1
        )));
    }
    let m_x = DVector::from_fn(p, |j, _| x.column(j).mean());
    let m_y = y.mean();
    let xc = DMatrix::from_fn(n, p, |i, j| x[(i, j)] - m_x[j]);
    let yc = y.map(|v| v - m_y);
    let nf = n as f64;
    let moments = PartitionedMoments {
        s_xx: xc.transpose() * &xc / nf,
        s_xy: xc.transpose() * &yc / nf,
        s_yy: yc.dot(&yc) / nf,
        m_x,
        m_y,
    };
    let (alpha, beta) = plug_in_coefficients(&moments)?;
    let resid = &yc - &xc * &beta;
    let rss = resid.dot(&resid);
    let sigma2 = rss / (n - p - 1) as f64;
    let xt = design(x);
    let gram_inv = general_inverse(&(xt.transpose() * &xt), "least-squares design")?;
    let asv = symmetrize(&(gram_inv * (nf * sigma2)));
    let mut theta = DVector::zeros(p + 1);
    theta[0] = alpha;
    theta.rows_mut(1, p).copy_from(&beta);
    let (se, lo, hi, pv) = inference(&theta, &asv, n, tau);
    Ok(RegressionFit {
        method: Method::LeastSquares,
        intercept: alpha,
        slopes: beta,
        sigma_eps: sigma2.sqrt(),
        asv,
        std_errors: se,
        ci_lower: lo,
        ci_upper: hi,
        p_values: pv,
        tau,
        n,
        scatter: None,
        filter_report: None,
    })
}

/// Dispatch on `method`.
pub fn fit(method: Method, x: &DMatrix<f64>, y: &DVector<f64>, opts: &FitOptions) -> Result<RegressionFit> {
    match method {
        Method::ThreeStep => fit_3s(x, y, opts),
        Method::TwoStep => fit_2s(x, y, opts),
        Method::LeastSquares => fit_ls(x, y, opts.tau),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn data(n: usize, p: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
        let y = DVector::from_fn(n, |i, _| {
            let e: f64 = StandardNormal.sample(&mut rng);
            1.0 + (0..p).map(|j| (j + 1) as f64 * x[(i, j)]).sum::<f64>() + 0.5 * e
        });
        (x, y)
    }

    #[test]
    fn plug_in_examples() {
        let m = PartitionedMoments {
            m_x: DVector::from_vec(vec![2.0]),
            m_y: 3.0,
            s_xx: DMatrix::from_element(1, 1, 1.0),
            s_xy: DVector::from_vec(vec![0.5]),
            s_yy: 1.0,
        };
        let (a, b) = plug_in_coefficients(&m).unwrap();
        assert_eq!(b[0], 0.5);
        assert_eq!(a, 2.0);
        let zero = PartitionedMoments {
            s_xy: DVector::zeros(1),
            ..m
        };
        let (a, b) = plug_in_coefficients(&zero).unwrap();
        assert_eq!((a, b[0]), (3.0, 0.0));
    }

    #[test]
    fn singular_covariate_block() {
        let m = PartitionedMoments {
            m_x: DVector::zeros(2),
            m_y: 0.0,
            s_xx: DMatrix::from_element(2, 2, 1.0),
            s_xy: DVector::zeros(2),
            s_yy: 1.0,
        };
        assert!(matches!(plug_in_coefficients(&m), Err(Error::Singular { .. })));
    }

    #[test]
    fn ls_exact_line() {
        let x = DMatrix::from_fn(20, 1, |i, _| i as f64 * 0.3 - 1.0);
        let y = x.column(0).map(|v| 3.0 * v);
        let fit = fit_ls(&x, &y, 0.05).unwrap();
        assert!((fit.slopes[0] - 3.0).abs() < 1e-13);
        assert!(fit.intercept.abs() < 1e-13);
    }

    #[test]
    fn ls_residual_identities() {
        let (x, y) = data(200, 3, 1);
        let fit = fit_ls(&x, &y, 0.05).unwrap();
        let r = &y - design(&x) * fit.coefficients();
        assert!(r.sum().abs() < 1e-8);
        assert!((x.transpose() * r).amax() < 1e-8);
    }

    #[test]
    fn blp_examples() {
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 42.0]);
        let u = Mask::from_fn(1, 2, |_, j| j == 0);
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.8, 0.8, 1.0]);
        let (xh, _) = impute_blp(&x, &u, &DVector::zeros(2), &s).unwrap();
        assert!((xh[(0, 1)] - 0.8).abs() < 1e-15);
        assert_eq!(xh[(0, 0)], 1.0);
        let m = DVector::from_vec(vec![5.0, 7.0]);
        let (xh, _) = impute_blp(&x, &u, &m, &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(xh[(0, 1)], 7.0);
        let (xh, empty) = impute_blp(&x, &Mask::from_fn(1, 2, |_, _| false), &m, &s).unwrap();
        assert_eq!((xh[(0, 0)], xh[(0, 1)], empty), (5.0, 7.0, 1));
        let (xh, _) = impute_blp(&x, &Mask::all_observed(1, 2), &m, &s).unwrap();
        assert_eq!(xh, x);
    }

    #[test]
    fn robust_fits_recover_coefficients() {
        let (x, y) = data(400, 2, 3);
        let opts = FitOptions {
            seed: 11,
            ..Default::default()
        };
        for fit in [fit_3s(&x, &y, &opts).unwrap(), fit_2s(&x, &y, &opts).unwrap()] {
            assert!((fit.slopes[0] - 1.0).abs() < 0.15);
            assert!((fit.slopes[1] - 2.0).abs() < 0.15);
            assert!((fit.intercept - 1.0).abs() < 0.15);
            for j in 0..3 {
                assert!(fit.ci_lower[j] < fit.ci_upper[j]);
                let half = norm_quantile(0.975) * (fit.asv[(j, j)] / 400.0).sqrt();
                assert!((fit.ci_half_width(j) - half).abs() < 1e-12);
                assert!((0.0..=1.0).contains(&fit.p_values[j]));
            }
            assert!(nalgebra::SymmetricEigen::new(fit.asv.clone()).eigenvalues.min() > 0.0);
        }
    }

    #[test]
    fn switch_off_makes_3s_equal_2s() {
        let (x, y) = data(300, 3, 5);
        let opts = FitOptions {
            seed: 2,
            ..Default::default()
        };
        let a = fit_3s(&x, &y, &opts).unwrap();
        if a.filter_report.as_ref().unwrap().switch_off {
            let b = fit_2s(&x, &y, &opts).unwrap();
            assert_eq!(a.coefficients(), b.coefficients());
            assert_eq!(a.asv, b.asv);
        }
    }
}
