//! Consistent univariate tail filter.
//!
//! Each tail of a variable is standardized by its α-quantile and the median
//! exceedance beyond it, and compared with an exponential reference law
//! `F₀(t) = 1 − exp(−t·ln 2)`. The flag proportion `d̂` is the largest
//! positive gap `F₀(t) − F̂(t)` over `t ≥ t₀ = 1/ln 2`; the most extreme
//! `d̂·100%` of the tail points are then filtered. Under clean data whose
//! tails decay at least exponentially fast, `d̂ → 0` and nothing is filtered
//! asymptotically.
//!
//! Precondition (not checkable from data): the marginal distribution is
//! continuous and its scaled tails are no heavier than `F₀` beyond `t₀`.

use std::f64::consts::LN_2;

use log::warn;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::mask::Mask;

pub const DEFAULT_ALPHA: f64 = 0.20;
pub const DEFAULT_XI: f64 = 0.01;

/// Tolerance when comparing `F̂(t)` with `1 − d̂`. Lets a point whose
/// reference probability is 1 to within rounding count as fully extreme.
const THRESHOLD_SLACK: f64 = 1e-12;

/// Lower end `t₀ = 1/ln 2` of the supremum defining `d̂`.
pub fn t0() -> f64 {
    1.0 / LN_2
}

/// Exponential reference CDF `F₀(t) = 1 − 2^{−t}`.
pub fn reference_cdf(t: f64) -> f64 {
    -(-LN_2 * t).exp_m1()
}

/// 1-based index `⌈n·a⌉` clamped to `[1, n]`, robust to the last-bit error
/// of the product when `n·a` is an integer.
fn order_index(n: usize, a: f64) -> usize {
    let x = n as f64 * a;
    let k = (x * (1.0 - 4.0 * f64::EPSILON)).ceil() as usize;
    k.clamp(1, n)
}

/// `Ĝ⁻¹(a) = X_(⌈n·a⌉)`, the empirical quantile without interpolation.
pub fn empirical_quantile(sample: &[f64], a: f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::invalid(format!("quantile level {a} outside (0, 1)")));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(|x, y| x.total_cmp(y));
    Ok(sorted[order_index(sorted.len(), a) - 1])
}

/// Tail location and scale estimates for one variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailEstimates {
    pub eta_upper: f64,
    pub s_upper: f64,
    pub eta_lower: f64,
    pub s_lower: f64,
    pub alpha: f64,
}

impl TailEstimates {
    pub fn upper_degenerate(&self) -> bool {
        !(self.s_upper > 0.0)
    }

    pub fn lower_degenerate(&self) -> bool {
        !(self.s_lower > 0.0)
    }
}

/// Outcome of comparing one standardized tail with the reference law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailFlagResult {
    /// Flag proportion `d̂ ∈ [0, 1]`.
    pub d_hat: f64,
    /// Threshold on the standardized scale; `+∞` for an empty tail.
    pub t_hat: f64,
    /// Cutoff on the data scale (`η̂ ± ŝ·t̂`), absent when the tail is empty
    /// or exempt from filtering.
    pub cutoff: Option<f64>,
    /// Number of points in the tail set.
    pub tail_size: usize,
    /// Number of tail points strictly beyond the threshold.
    pub flagged: usize,
}

impl TailFlagResult {
    fn empty() -> Self {
        TailFlagResult {
            d_hat: 0.0,
            t_hat: f64::INFINITY,
            cutoff: None,
            tail_size: 0,
            flagged: 0,
        }
    }
}

/// Non-fatal conditions met while filtering.
#[derive(Debug, Clone, PartialEq)]
pub enum FilterWarning {
    /// No spread beyond the tail quantile: the side is exempt from filtering.
    DegenerateTail { column: usize, upper: bool },
    /// Ties make the median-of-exceedances and quantile-difference forms of
    /// the upper tail scale disagree; the median form is used.
    TiedScale {
        column: usize,
        median_form: f64,
        quantile_form: f64,
    },
}

fn tail_estimates_sorted(
    sorted: &[f64],
    alpha: f64,
    column: usize,
    warnings: &mut Vec<FilterWarning>,
) -> Result<TailEstimates> {
    let n = sorted.len();
    let ku = order_index(n, 1.0 - alpha);
    let eta_upper = sorted[ku - 1];
    // Exceedances are the points strictly above η̂ᵘ.
    let first_above = sorted.partition_point(|&x| x <= eta_upper);
    let m_upper = n - first_above;
    let s_upper = if m_upper == 0 {
        0.0
    } else {
        let median_form = sorted[first_above + m_upper.div_ceil(2) - 1] - eta_upper;
        let quantile_form = sorted[order_index(n, 1.0 - alpha / 2.0) - 1] - eta_upper;
        if median_form != quantile_form {
            let tied = sorted.windows(2).any(|w| w[0] == w[1]);
            if !tied {
                return Err(Error::Internal(format!(
                    "upper tail scale mismatch in column {column}: {median_form} vs {quantile_form}"
                )));
            }
            warnings.push(FilterWarning::TiedScale {
                column,
                median_form,
                quantile_form,
            });
        }
        median_form
    };

    let kl = order_index(n, alpha);
    let eta_lower = sorted[kl - 1];
    let below = sorted.partition_point(|&x| x < eta_lower);
    let s_lower = if below == 0 {
        0.0
    } else {
        // Shortfalls η̂ˡ − X ascending are the points below η̂ˡ read downwards.
        eta_lower - sorted[below - below.div_ceil(2)]
    };

    Ok(TailEstimates {
        eta_upper,
        s_upper,
        eta_lower,
        s_lower,
        alpha,
    })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::invalid(format!("alpha {alpha} outside (0, 0.5)")));
    }
    Ok(())
}

fn min_sample_size(alpha: f64) -> usize {
    (1.0 / alpha * (1.0 - 4.0 * f64::EPSILON)).ceil() as usize
}

fn sorted_finite(sample: &[f64], column: usize) -> Result<Vec<f64>> {
    if let Some(row) = sample.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { row, col: column });
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    Ok(sorted)
}

/// Estimate `(η̂ᵘ, ŝᵘ, η̂ˡ, ŝˡ)`. A side with no point strictly beyond its
/// quantile gets scale 0 and is later exempt from filtering.
pub fn tail_estimates(sample: &[f64], alpha: f64) -> Result<TailEstimates> {
    check_alpha(alpha)?;
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    if sample.len() < min_sample_size(alpha) {
        return Err(Error::invalid(format!(
            "sample of size {} is too small for alpha {alpha}",
            sample.len()
        )));
    }
    let sorted = sorted_finite(sample, 0)?;
    let mut warnings = Vec::new();
    let est = tail_estimates_sorted(&sorted, alpha, 0, &mut warnings)?;
    for w in warnings {
        warn!("{w:?}");
    }
    Ok(est)
}

/// Threshold search on a standardized tail. Returns the result and the
/// number of leading sorted points kept.
///
/// The `⌊m·d̂⌋` most extreme points are flagged, i.e. everything beyond
/// `t̂ = min{t : F̂(t) ≥ 1 − d̂}`. When that count ends inside a block of tied
/// values the whole block is flagged, so the outcome depends only on the
/// values and not on how ties are ordered.
fn flag_standardized(tail: &[f64]) -> (TailFlagResult, usize) {
    let m = tail.len();
    if m == 0 {
        return (TailFlagResult::empty(), 0);
    }
    let mf = m as f64;
    let t0 = t0();

    // sup over t ≥ t₀ of F₀(t) − F̂(t): at t₀ itself, and at the left limit
    // of every jump point beyond t₀, where F̂ equals (#points below)/m.
    let at_t0 = tail.partition_point(|&t| t <= t0);
    let mut d = reference_cdf(t0) - at_t0 as f64 / mf;
    for i in at_t0..m {
        if i > at_t0 && tail[i] == tail[i - 1] {
            continue;
        }
        d = d.max(reference_cdf(tail[i]) - i as f64 / mf);
    }
    let d_hat = d.max(0.0);

    // Positional threshold: the first index whose ECDF rank reaches 1 − d̂.
    let target = 1.0 - d_hat - THRESHOLD_SLACK;
    let last = (0..m).find(|&i| (i + 1) as f64 / mf >= target).unwrap_or(m - 1);
    let kept = if last + 1 == m {
        m
    } else {
        tail.partition_point(|&t| t < tail[last + 1])
    };
    let result = TailFlagResult {
        d_hat,
        t_hat: if kept == 0 { 0.0 } else { tail[kept - 1] },
        cutoff: None,
        tail_size: m,
        flagged: m - kept,
    };
    (result, kept)
}

/// Flag proportion and threshold for an ascending slice of standardized
/// exceedances (all positive).
pub fn flag_proportion(tail_standardized: &[f64]) -> Result<TailFlagResult> {
    if tail_standardized.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("standardized tail must be sorted ascending"));
    }
    if tail_standardized.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
        return Err(Error::invalid("standardized exceedances must be positive and finite"));
    }
    Ok(flag_standardized(tail_standardized).0)
}

/// Per-variable outcome of the filter.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableFilter {
    /// `true` = keep.
    pub keep: Vec<bool>,
    pub upper: TailFlagResult,
    pub lower: TailFlagResult,
    pub estimates: TailEstimates,
    pub warnings: Vec<FilterWarning>,
}

fn filter_sorted(sample: &[f64], sorted: &[f64], alpha: f64, column: usize) -> Result<VariableFilter> {
    let mut warnings = Vec::new();
    let est = tail_estimates_sorted(sorted, alpha, column, &mut warnings)?;
    let n = sorted.len();

    let upper = if est.upper_degenerate() {
        warnings.push(FilterWarning::DegenerateTail { column, upper: true });
        TailFlagResult::empty()
    } else {
        let start = sorted.partition_point(|&x| x <= est.eta_upper);
        let tail: Vec<f64> = sorted[start..]
            .iter()
            .map(|&x| (x - est.eta_upper) / est.s_upper)
            .collect();
        let (mut res, kept) = flag_standardized(&tail);
        // The cutoff is the data value at the threshold point, i.e.
        // η̂ᵘ + ŝᵘ·t̂ᵘ without re-rounding.
        res.cutoff = (res.tail_size > 0).then(|| {
            if kept == 0 {
                est.eta_upper
            } else {
                sorted[start + kept - 1]
            }
        });
        res
    };

    let lower = if est.lower_degenerate() {
        warnings.push(FilterWarning::DegenerateTail { column, upper: false });
        TailFlagResult::empty()
    } else {
        let end = sorted.partition_point(|&x| x < est.eta_lower);
        let tail: Vec<f64> = sorted[..end]
            .iter()
            .rev()
            .map(|&x| (est.eta_lower - x) / est.s_lower)
            .collect();
        let (mut res, kept) = flag_standardized(&tail);
        res.cutoff = (res.tail_size > 0).then(|| if kept == 0 { est.eta_lower } else { sorted[end - kept] });
        res
    };

    let hi = upper.cutoff.unwrap_or(f64::INFINITY);
    let lo = lower.cutoff.unwrap_or(f64::NEG_INFINITY);
    let keep: Vec<bool> = sample.iter().map(|&x| !(x > hi || x < lo)).collect();
    debug_assert_eq!(keep.len(), n);
    for w in &warnings {
        warn!("{w:?}");
    }
    Ok(VariableFilter {
        keep,
        upper,
        lower,
        estimates: est,
        warnings,
    })
}

/// Filter one variable: cells below `η̂ˡ − ŝˡ·t̂ˡ` or above `η̂ᵘ + ŝᵘ·t̂ᵘ`
/// (strictly) are flagged.
pub fn filter_variable(sample: &[f64], alpha: f64) -> Result<VariableFilter> {
    check_alpha(alpha)?;
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    if sample.len() < min_sample_size(alpha) {
        return Err(Error::invalid(format!(
            "sample of size {} is too small for alpha {alpha}",
            sample.len()
        )));
    }
    let sorted = sorted_finite(sample, 0)?;
    filter_sorted(sample, &sorted, alpha, 0)
}

/// Result of filtering every column of a data matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterReport {
    /// Raw flags `U` (true = keep).
    pub flags: Mask,
    /// Flags after the global switch, `U*`.
    pub effective_flags: Mask,
    pub per_variable: Vec<VariableFilter>,
    /// Number of rows of `U` with every cell kept.
    pub n_complete: usize,
    pub switch_off: bool,
    pub xi: f64,
    pub alpha: f64,
}

impl FilterReport {
    /// Fraction of rows with at least one flagged cell, `(n − n₀)/n`.
    pub fn affected_fraction(&self) -> f64 {
        let n = self.flags.rows();
        (n - self.n_complete) as f64 / n as f64
    }

    pub fn flagged_cells(&self) -> usize {
        self.flags.filtered_cells()
    }

    pub fn flagged_per_variable(&self) -> Vec<usize> {
        self.per_variable
            .iter()
            .map(|v| v.keep.iter().filter(|&&k| !k).count())
            .collect()
    }
}

/// Filter each column and apply the global switch: when the fraction of
/// rows touched by the filter is at most `xi`, every cell is kept.
pub fn filter_matrix(x: &DMatrix<f64>, alpha: f64, xi: f64) -> Result<FilterReport> {
    check_alpha(alpha)?;
    if !(0.0..1.0).contains(&xi) {
        return Err(Error::invalid(format!("xi {xi} outside [0, 1)")));
    }
    let (n, p) = x.shape();
    if n == 0 || p == 0 {
        return Err(Error::EmptySample);
    }
    if n < p + 1 {
        return Err(Error::invalid(format!("need n ≥ p + 1, got n = {n}, p = {p}")));
    }
    if n < min_sample_size(alpha) {
        return Err(Error::invalid(format!("{n} rows are too few for alpha {alpha}")));
    }
    for j in 0..p {
        for i in 0..n {
            if !x[(i, j)].is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
        }
    }

    let mut per_variable = Vec::with_capacity(p);
    for j in 0..p {
        let col: Vec<f64> = x.column(j).iter().copied().collect();
        let sorted = sorted_finite(&col, j)?;
        per_variable.push(filter_sorted(&col, &sorted, alpha, j)?);
    }
    let flags = Mask::from_fn(n, p, |i, j| per_variable[j].keep[i]);
    let n_complete = flags.complete_rows();
    let switch_off = ((n - n_complete) as f64) / (n as f64) <= xi;
    let effective_flags = if switch_off {
        Mask::all_observed(n, p)
    } else {
        flags.clone()
    };
    Ok(FilterReport {
        flags,
        effective_flags,
        per_variable,
        n_complete,
        switch_off,
        xi,
        alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn one_to(n: usize) -> Vec<f64> {
        (1..=n).map(|v| v as f64).collect()
    }

    /// Independent grid evaluation of sup_{t ≥ t₀} {F₀(t) − F̂(t)}⁺, with F̂
    /// counted directly and left limits probed just below every point.
    fn grid_oracle(tail: &[f64], points: usize) -> f64 {
        let m = tail.len() as f64;
        let ecdf = |t: f64| tail.iter().filter(|&&v| v <= t).count() as f64 / m;
        let hi = tail.iter().cloned().fold(t0(), f64::max) + 1.0;
        let mut best = 0.0_f64;
        for g in 0..=points {
            let t = t0() + (hi - t0()) * g as f64 / points as f64;
            best = best.max(reference_cdf(t) - ecdf(t));
        }
        for &v in tail {
            if v > t0() {
                let t = v * (1.0 - 1e-15);
                best = best.max(reference_cdf(t) - ecdf(t));
            }
        }
        best.max(0.0)
    }

    #[test]
    fn empirical_quantile_examples() {
        assert_eq!(empirical_quantile(&[3.0, 1.0, 2.0], 0.5).unwrap(), 2.0);
        assert_eq!(empirical_quantile(&one_to(10), 0.8).unwrap(), 8.0);
        assert_eq!(empirical_quantile(&[5.0], 0.2).unwrap(), 5.0);
        assert_eq!(empirical_quantile(&[], 0.2), Err(Error::EmptySample));
    }

    #[test]
    fn tail_estimates_on_one_to_ten() {
        let est = tail_estimates(&one_to(10), 0.2).unwrap();
        assert_eq!(est.eta_upper, 8.0);
        assert_eq!(est.s_upper, 1.0);
        assert_eq!(est.eta_lower, 2.0);
        assert_eq!(est.s_lower, 1.0);
    }

    #[test]
    fn exponential_tail_scale_is_log_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sample: Vec<f64> = (0..1_000_000)
            .map(|_| rand_distr::Exp1.sample(&mut rng))
            .collect::<Vec<f64>>();
        let est = tail_estimates(&sample, 0.2).unwrap();
        assert!((est.s_upper - LN_2).abs() < 0.01, "s = {}", est.s_upper);
    }

    #[test]
    fn reference_shaped_tail_has_no_flags() {
        // Quantiles of the reference law itself: F̂ never falls below F₀ by
        // more than 1/m at a jump, and the positive part can only come from
        // discreteness.
        let m = 200;
        let tail: Vec<f64> = (1..=m)
            .map(|i| -((1.0 - (i as f64 - 0.5) / m as f64).ln()) / LN_2)
            .collect();
        let res = flag_proportion(&tail).unwrap();
        assert!(res.d_hat < 1.0 / m as f64 + 1e-12);
        assert!((res.d_hat - grid_oracle(&tail, 10_000)).abs() < 1e-12);
        assert_eq!(res.flagged, 0);
    }

    #[test]
    fn single_far_point_is_the_only_flag() {
        let mut tail: Vec<f64> = (1..=9).map(|i| 0.2 * i as f64).collect();
        tail.push(50.0);
        let res = flag_proportion(&tail).unwrap();
        assert!((res.d_hat - (reference_cdf(50.0) - 0.9)).abs() < 1e-12);
        assert!((res.d_hat - 0.1).abs() < 1e-9);
        assert!((res.d_hat - grid_oracle(&tail, 10_000)).abs() < 1e-12);
        assert_eq!(res.flagged, 1);
        assert_eq!(res.t_hat, 1.8);
    }

    #[test]
    fn tail_inside_t0_gives_zero() {
        let res = flag_proportion(&[0.1, 0.5, 1.0, 1.2]).unwrap();
        assert_eq!(res.d_hat, 0.0);
        assert_eq!(res.flagged, 0);
        assert_eq!(flag_proportion(&[]).unwrap().d_hat, 0.0);
    }

    #[test]
    fn gross_outlier_is_flagged() {
        let mut s = one_to(100);
        s[37] = 1e6;
        let res = filter_variable(&s, 0.2).unwrap();
        assert!(!res.keep[37]);
        assert!(res.keep.iter().filter(|&&k| k).count() >= 98);
        assert!(res.upper.d_hat >= 1.0 / res.upper.tail_size as f64 - 1e-9);
    }

    #[test]
    fn tied_outliers_are_flagged_together() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut v: Vec<f64> = (0..300).map(|_| StandardNormal.sample(&mut rng)).collect();
        for x in v.iter_mut().take(15) {
            *x = 10.0;
        }
        let res = filter_variable(&v, 0.2).unwrap();
        assert!(res.keep[..15].iter().all(|&k| !k));
        assert!(res.upper.cutoff.unwrap() < 10.0);
        assert_eq!(res.upper.flagged, 15);
    }

    #[test]
    fn constant_sample_is_exempt() {
        let res = filter_variable(&[5.0; 5], 0.2).unwrap();
        assert!(res.keep.iter().all(|&k| k));
        assert_eq!(res.warnings.len(), 2);
    }

    #[test]
    fn normal_sample_rarely_flags() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s: Vec<f64> = (0..100_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let res = filter_variable(&s, 0.2).unwrap();
        let frac = res.keep.iter().filter(|&&k| !k).count() as f64 / s.len() as f64;
        assert!(frac < 0.005, "flagged fraction {frac}");
    }

    #[test]
    fn flagged_cells_lie_beyond_cutoffs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s: Vec<f64> = (0..500).map(|_| StandardNormal.sample(&mut rng)).collect();
        for v in s.iter_mut().take(25) {
            *v += 8.0;
        }
        let res = filter_variable(&s, 0.2).unwrap();
        let est = res.estimates;
        for (x, keep) in s.iter().zip(&res.keep) {
            if !keep {
                let above = *x > est.eta_upper + est.s_upper * res.upper.t_hat;
                let below = *x < est.eta_lower - est.s_lower * res.lower.t_hat;
                assert!(above || below);
            }
        }
        let beyond = res.keep.iter().filter(|&&k| !k).count();
        assert!(beyond >= 20);
        assert!(res.upper.flagged <= (res.upper.d_hat * res.upper.tail_size as f64).ceil() as usize);
        assert!(res.upper.t_hat >= t0());
    }

    #[test]
    fn switch_arithmetic() {
        // 200 rows; one gross cell → (200 − 199)/200 = 0.005 ≤ 0.01.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut x = DMatrix::from_fn(200, 3, |_, _| {
            let u: f64 = rand::Rng::gen(&mut rng);
            u
        });
        x[(17, 1)] = 1e6;
        let rep = filter_matrix(&x, 0.2, 0.01).unwrap();
        if rep.n_complete == 199 {
            assert!(rep.switch_off);
            assert!(rep.effective_flags.is_all_observed());
        }
        assert!(!rep.flags.get(17, 1));
        // Five affected rows → 0.025 > 0.01.
        for i in 0..5 {
            x[(50 + i, 0)] = -1e6;
        }
        let rep = filter_matrix(&x, 0.2, 0.01).unwrap();
        assert!(rep.n_complete <= 194);
        assert!(!rep.switch_off);
        assert_eq!(rep.effective_flags, rep.flags);
    }

    #[test]
    fn non_finite_is_named() {
        let mut x = DMatrix::from_element(20, 2, 1.0);
        x[(4, 1)] = f64::NAN;
        assert_eq!(filter_matrix(&x, 0.2, 0.01), Err(Error::NonFinite { row: 4, col: 1 }));
    }
}
