use crate::error::{Error, Result};

/// Bounded rho functions used by the estimators. Both are normalized so that
/// `rho(t) = 1` past the rejection point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhoFunction {
    /// `min(1, 1 − (1 − t)³)`, applied to a squared distance ratio.
    TukeyBisquare,
    /// `min(1, t²/2)`.
    Huber,
}

impl RhoFunction {
    pub fn rho(self, t: f64) -> f64 {
        match self {
            RhoFunction::TukeyBisquare => bisquare_rho(t),
            RhoFunction::Huber => (0.5 * t * t).min(1.0),
        }
    }

    /// First derivative; zero past the rejection point.
    pub fn drho(self, t: f64) -> f64 {
        match self {
            RhoFunction::TukeyBisquare => bisquare_psi(t),
            RhoFunction::Huber => {
                if t < std::f64::consts::SQRT_2 {
                    t
                } else {
                    0.0
                }
            }
        }
    }
}

/// Checked evaluation; negative arguments are rejected.
pub fn rho_eval(rho: RhoFunction, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::invalid(format!("rho argument must be nonnegative, got {t}")));
    }
    Ok(rho.rho(t))
}

#[inline]
pub fn bisquare_rho(t: f64) -> f64 {
    if t >= 1.0 {
        1.0
    } else {
        let u = 1.0 - t;
        1.0 - u * u * u
    }
}

/// `ρ′_B(t) = 3(1 − t)²` on `[0, 1)`, zero beyond.
#[inline]
pub fn bisquare_psi(t: f64) -> f64 {
    if t >= 1.0 {
        0.0
    } else {
        let u = 1.0 - t;
        3.0 * u * u
    }
}

/// `ρ″_B(t) = −6(1 − t)` on `[0, 1)`; the kink at 1 takes the value 0 from above.
#[inline]
pub fn bisquare_psi_prime(t: f64) -> f64 {
    if t >= 1.0 {
        0.0
    } else {
        -6.0 * (1.0 - t)
    }
}
