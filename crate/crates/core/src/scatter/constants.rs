//! Normal-model tuning constants for the bisquare S-scale.
//!
//! `c_k` solves `E[ρ_B(χ²_k / c)] = b`. The expectation is integrated with
//! composite Simpson after the substitution `x = u²`, which removes the
//! `x^{k/2−1}` singularity at the origin for `k = 1`.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

pub const DEFAULT_INTERVALS: usize = 4000;

type Cache = Mutex<HashMap<(usize, u64), f64>>;

fn cache() -> &'static Cache {
    static CACHE: OnceLock<Cache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn gamma_cache() -> &'static Cache {
    static CACHE: OnceLock<Cache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// `∫₀^√c (1 − u²/c)³ g_k(u) du` with `g_k` the density of `√χ²_k`.
fn truncated_integral(k: usize, c: f64, intervals: usize) -> f64 {
    let kf = k as f64;
    let log_norm = (kf / 2.0 - 1.0) * std::f64::consts::LN_2 + ln_gamma(kf / 2.0);
    let upper = c.sqrt();
    let f = |u: f64| {
        let v = 1.0 - u * u / c;
        if v <= 0.0 {
            return 0.0;
        }
        let dens = if u == 0.0 {
            if k == 1 {
                (-log_norm).exp()
            } else {
                0.0
            }
        } else {
            ((kf - 1.0) * u.ln() - 0.5 * u * u - log_norm).exp()
        };
        v * v * v * dens
    };
    let n = intervals + intervals % 2;
    let h = upper / n as f64;
    let mut sum = f(0.0) + f(upper);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(i as f64 * h);
    }
    sum * h / 3.0
}

/// `E[ρ_B(χ²_k / c)]` by numerical integration.
pub fn expected_rho(k: usize, c: f64, intervals: usize) -> f64 {
    1.0 - truncated_integral(k, c, intervals)
}

/// Same expectation in closed form through χ² CDFs of `k + 2j` degrees of
/// freedom, using `E[X^j 1{X<c}] = k(k+2)…(k+2j−2)·F_{k+2j}(c)`.
pub fn expected_rho_closed_form(k: usize, c: f64) -> f64 {
    let kf = k as f64;
    let f = |df: f64| ChiSquared::new(df).expect("positive df").cdf(c);
    let m1 = kf * f(kf + 2.0);
    let m2 = kf * (kf + 2.0) * f(kf + 4.0);
    let m3 = kf * (kf + 2.0) * (kf + 4.0) * f(kf + 6.0);
    // 1 − E[(1 − X/c)³ 1{X<c}]
    1.0 - (f(kf) - 3.0 * m1 / c + 3.0 * m2 / (c * c) - m3 / (c * c * c))
}

fn check(k: usize, b: f64) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    if !(b > 0.0 && b < 1.0) {
        return Err(Error::invalid(format!("breakdown {b} outside (0, 1)")));
    }
    Ok(())
}

/// Solve for `c_k` with a given number of Simpson intervals (uncached).
pub fn consistency_constant_with_grid(k: usize, b: f64, intervals: usize) -> Result<f64> {
    check(k, b)?;
    // E is decreasing in c, from 1 at c → 0 to 0 at c → ∞.
    let g = |c: f64| expected_rho(k, c, intervals) - b;
    let mut lo = 1e-3;
    while g(lo) < 0.0 {
        lo *= 0.5;
    }
    let mut hi = (k as f64).max(1.0);
    while g(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    let (mut a, mut z) = (lo.ln(), hi.ln());
    for _ in 0..200 {
        let mid = 0.5 * (a + z);
        if g(mid.exp()) > 0.0 {
            a = mid;
        } else {
            z = mid;
        }
        if z - a < 1e-15 {
            break;
        }
    }
    Ok((0.5 * (a + z)).exp())
}

/// `c_k` for dimension `k` and breakdown `b`, memoized process-wide.
pub fn consistency_constant(k: usize, b: f64) -> Result<f64> {
    check(k, b)?;
    let key = (k, b.to_bits());
    if let Some(&c) = cache().lock().expect("constant cache").get(&key) {
        return Ok(c);
    }
    let c = consistency_constant_with_grid(k, b, DEFAULT_INTERVALS)?;
    cache().lock().expect("constant cache").insert(key, c);
    Ok(c)
}

/// `γ_k = E[ρ′_B(χ²_k/c_k)·χ²_k]/k` at the normal model. Dividing the
/// bisquare weights of a case with `k` observed coordinates by `γ_k` makes
/// its weighted outer product unbiased for the observed scatter block.
pub fn weight_calibration(k: usize, b: f64) -> Result<f64> {
    let key = (k, b.to_bits());
    if let Some(&g) = gamma_cache().lock().expect("constant cache").get(&key) {
        return Ok(g);
    }
    let c = consistency_constant(k, b)?;
    let kf = k as f64;
    let f = |df: f64| ChiSquared::new(df).expect("positive df").cdf(c);
    // 3·E[(X − 2X²/c + X³/c²) 1{X<c}] / k
    let m1 = kf * f(kf + 2.0);
    let m2 = kf * (kf + 2.0) * f(kf + 4.0);
    let m3 = kf * (kf + 2.0) * (kf + 4.0) * f(kf + 6.0);
    let g = 3.0 * (m1 - 2.0 * m2 / c + m3 / (c * c)) / kf;
    gamma_cache().lock().expect("constant cache").insert(key, g);
    Ok(g)
}
