//! C interface to `robust3s`.
//!
//! Matrices cross the boundary as row-major `double` arrays. Results live
//! behind opaque handles that the caller releases with the matching `_free`
//! function. Every entry point returns an [`R3sStatus`]; on failure the
//! message is available from [`r3s_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use robust3s::filter::{filter_matrix, FilterReport, DEFAULT_ALPHA, DEFAULT_XI};
use robust3s::nalgebra::{DMatrix, DVector};
use robust3s::regress::{fit, FitOptions, Method, RegressionFit, DEFAULT_TAU};
use robust3s::Error;

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum R3sStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DataError = 3,
    NumericalError = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum R3sMethod {
    ThreeStep = 0,
    TwoStep = 1,
    LeastSquares = 2,
}

impl From<R3sMethod> for Method {
    fn from(m: R3sMethod) -> Self {
        match m {
            R3sMethod::ThreeStep => Method::ThreeStep,
            R3sMethod::TwoStep => Method::TwoStep,
            R3sMethod::LeastSquares => Method::LeastSquares,
        }
    }
}

/// Tuning constants for [`r3s_fit`]. Start from [`r3s_fit_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct R3sFitOptions {
    /// Filter tail level.
    pub alpha: f64,
    /// Filter switch threshold.
    pub xi: f64,
    /// Confidence intervals have level `1 - tau`.
    pub tau: f64,
    /// Number of random starts of the scatter estimator.
    pub subsamples: usize,
    pub seed: u64,
}

/// Opaque regression result.
pub struct R3sFit(RegressionFit);

/// Opaque filter result.
pub struct R3sFilterReport(FilterReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> R3sStatus {
    match err {
        Error::InvalidArgument(_) => R3sStatus::InvalidArgument,
        e if e.is_numerical() => R3sStatus::NumericalError,
        _ => R3sStatus::DataError,
    }
}

/// Run `f`, recording the error message and mapping panics to a status.
fn guard(f: impl FnOnce() -> Result<(), (R3sStatus, String)>) -> R3sStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => R3sStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            R3sStatus::Panic
        }
    }
}

fn core_err(e: Error) -> (R3sStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (R3sStatus, String) {
    (R3sStatus::NullPointer, format!("{what} is null"))
}

/// Borrow a row-major `n × p` matrix.
///
/// # Safety
/// `data` must point to `n * p` readable doubles.
unsafe fn read_matrix(data: *const f64, n: usize, p: usize) -> Result<DMatrix<f64>, (R3sStatus, String)> {
    if data.is_null() {
        return Err(null("matrix"));
    }
    let len = n
        .checked_mul(p)
        .ok_or_else(|| (R3sStatus::InvalidArgument, "matrix size overflows".to_string()))?;
    let slice = std::slice::from_raw_parts(data, len);
    Ok(DMatrix::from_row_slice(n, p, slice))
}

/// Copy `src` into a caller buffer of `len` doubles.
///
/// # Safety
/// `out` must point to `len` writable doubles.
unsafe fn write_out(src: &[f64], out: *mut f64, len: usize) -> Result<(), (R3sStatus, String)> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if len < src.len() {
        return Err((
            R3sStatus::InvalidArgument,
            format!("buffer holds {len} values, need {}", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

#[no_mangle]
pub extern "C" fn r3s_fit_options_default() -> R3sFitOptions {
    let d = FitOptions::default();
    R3sFitOptions {
        alpha: DEFAULT_ALPHA,
        xi: DEFAULT_XI,
        tau: DEFAULT_TAU,
        subsamples: d.scatter.subsamples,
        seed: d.seed,
    }
}

/// Fit the regression of `y` (length `n`) on the row-major `n × p`
/// covariates `x`. `options` may be null for the defaults. On success
/// `*out` owns a new handle.
///
/// # Safety
/// `x` must hold `n * p` doubles, `y` must hold `n`, and `out` must be a
/// valid pointer to write to.
#[no_mangle]
pub unsafe extern "C" fn r3s_fit(
    x: *const f64,
    n: usize,
    p: usize,
    y: *const f64,
    method: R3sMethod,
    options: *const R3sFitOptions,
    out: *mut *mut R3sFit,
) -> R3sStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let xm = read_matrix(x, n, p)?;
        if y.is_null() {
            return Err(null("y"));
        }
        let yv = DVector::from_column_slice(std::slice::from_raw_parts(y, n));
        let o = if options.is_null() {
            r3s_fit_options_default()
        } else {
            *options
        };
        let mut opts = FitOptions {
            alpha_filter: o.alpha,
            xi: o.xi,
            tau: o.tau,
            seed: o.seed,
            ..FitOptions::default()
        };
        opts.scatter.subsamples = o.subsamples;
        let result = fit(method.into(), &xm, &yv, &opts).map_err(core_err)?;
        *out = Box::into_raw(Box::new(R3sFit(result)));
        Ok(())
    })
}

/// Number of coefficients, intercept first: `p + 1`. Zero for null.
///
/// # Safety
/// `fit` must be null or a live handle from [`r3s_fit`].
#[no_mangle]
pub unsafe extern "C" fn r3s_fit_num_coefficients(fit: *const R3sFit) -> usize {
    fit.as_ref().map_or(0, |f| f.0.slopes.len() + 1)
}

/// Residual scale, NaN for null.
///
/// # Safety
/// `fit` must be null or a live handle from [`r3s_fit`].
#[no_mangle]
pub unsafe extern "C" fn r3s_fit_sigma(fit: *const R3sFit) -> f64 {
    fit.as_ref().map_or(f64::NAN, |f| f.0.sigma_eps)
}

/// Which per-coefficient quantity [`r3s_fit_values`] copies out.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum R3sFitValue {
    Coefficients = 0,
    StdErrors = 1,
    CiLower = 2,
    CiUpper = 3,
    PValues = 4,
}

/// Copy `p + 1` values, intercept first, into `out`.
///
/// # Safety
/// `fit` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn r3s_fit_values(
    fit: *const R3sFit,
    which: R3sFitValue,
    out: *mut f64,
    len: usize,
) -> R3sStatus {
    guard(|| {
        let f = &fit.as_ref().ok_or_else(|| null("fit"))?.0;
        let v = match which {
            R3sFitValue::Coefficients => f.coefficients(),
            R3sFitValue::StdErrors => f.std_errors.clone(),
            R3sFitValue::CiLower => f.ci_lower.clone(),
            R3sFitValue::CiUpper => f.ci_upper.clone(),
            R3sFitValue::PValues => f.p_values.clone(),
        };
        write_out(v.as_slice(), out, len)
    })
}

/// Copy the `(p + 1) × (p + 1)` asymptotic covariance, row-major.
///
/// # Safety
/// `fit` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn r3s_fit_asv(fit: *const R3sFit, out: *mut f64, len: usize) -> R3sStatus {
    guard(|| {
        let f = &fit.as_ref().ok_or_else(|| null("fit"))?.0;
        // Symmetric, so the column-major storage is also row-major.
        write_out(f.asv.as_slice(), out, len)
    })
}

/// Release a fit. Null is a no-op.
///
/// # Safety
/// `fit` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn r3s_fit_free(fit: *mut R3sFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Filter every column of the row-major `n × p` matrix `x`.
///
/// # Safety
/// `x` must hold `n * p` doubles and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn r3s_filter(
    x: *const f64,
    n: usize,
    p: usize,
    alpha: f64,
    xi: f64,
    out: *mut *mut R3sFilterReport,
) -> R3sStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let xm = read_matrix(x, n, p)?;
        let report = filter_matrix(&xm, alpha, xi).map_err(core_err)?;
        *out = Box::into_raw(Box::new(R3sFilterReport(report)));
        Ok(())
    })
}

/// Write `n * p` row-major flags, 1 for a flagged cell. With `effective`
/// nonzero the flags after the global switch are returned.
///
/// # Safety
/// `report` must be a live handle and `out` must hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn r3s_filter_flags(
    report: *const R3sFilterReport,
    effective: i32,
    out: *mut u8,
    len: usize,
) -> R3sStatus {
    guard(|| {
        let r = &report.as_ref().ok_or_else(|| null("report"))?.0;
        if out.is_null() {
            return Err(null("output buffer"));
        }
        let mask = if effective != 0 { &r.effective_flags } else { &r.flags };
        let flags: Vec<u8> = mask.to_u8().into_iter().map(|kept| 1 - kept).collect();
        if len < flags.len() {
            return Err((
                R3sStatus::InvalidArgument,
                format!("buffer holds {len} bytes, need {}", flags.len()),
            ));
        }
        ptr::copy_nonoverlapping(flags.as_ptr(), out, flags.len());
        Ok(())
    })
}

/// 1 when the global switch discarded all flags, 0 otherwise, -1 for null.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn r3s_filter_switch_off(report: *const R3sFilterReport) -> i32 {
    report.as_ref().map_or(-1, |r| i32::from(r.0.switch_off))
}

/// Number of raw flagged cells, 0 for null.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn r3s_filter_flagged_cells(report: *const R3sFilterReport) -> usize {
    report.as_ref().map_or(0, |r| r.0.flagged_cells())
}

/// Release a filter report. Null is a no-op.
///
/// # Safety
/// `report` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn r3s_filter_free(report: *mut R3sFilterReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Message of the last failure on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn r3s_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn r3s_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_mapping() {
        assert_eq!(
            status_of(&Error::InvalidArgument("x".into())),
            R3sStatus::InvalidArgument
        );
        assert_eq!(status_of(&Error::EmptySample), R3sStatus::DataError);
        assert_eq!(status_of(&Error::NonFinite { row: 0, col: 0 }), R3sStatus::DataError);
        assert_eq!(
            status_of(&Error::NonPositiveResidualVariance(0.0)),
            R3sStatus::NumericalError
        );
    }

    #[test]
    fn panics_become_a_status() {
        let status = guard(|| panic!("boom"));
        assert_eq!(status, R3sStatus::Panic);
        let msg = unsafe { std::ffi::CStr::from_ptr(r3s_last_error()) };
        assert_eq!(msg.to_str().unwrap(), "internal panic");
    }

    #[test]
    fn defaults_mirror_the_core() {
        let d = r3s_fit_options_default();
        assert_eq!((d.alpha, d.xi, d.tau), (DEFAULT_ALPHA, DEFAULT_XI, DEFAULT_TAU));
    }
}
