//! Univariate distributions used by the filter, the inference layer and the
//! simulation designs.
//!
//! CDFs come from `statrs` (series / continued-fraction incomplete gamma and
//! beta functions). Quantiles without a closed form are obtained by a
//! bracketed, safeguarded Newton inversion of those CDFs.

use std::f64::consts::SQRT_2;

use statrs::distribution::{ChiSquared, Continuous, ContinuousCDF, FisherSnedecor};
use statrs::function::erf::{erfc, erfc_inv};

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Standard normal upper tail `1 − Φ(x)`, accurate far into the tail.
pub fn norm_sf(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

/// Standard normal quantile `Φ⁻¹(p)`; `±∞` at the endpoints.
pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    -SQRT_2 * erfc_inv(2.0 * p)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Two-sided normal p-value for a z statistic.
pub fn two_sided_p_value(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    erfc(z.abs() / SQRT_2).clamp(0.0, 1.0)
}

/// Marginal laws used for covariate generation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Marginal {
    StandardNormal,
    ChiSquared {
        df: f64,
    },
    FisherF {
        df1: f64,
        df2: f64,
    },
    /// Pareto with scale `x_m` and shape `a`: `P(X > x) = (x_m/x)^a`, `x ≥ x_m`.
    Pareto {
        scale: f64,
        shape: f64,
    },
}

impl Marginal {
    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Marginal::StandardNormal => norm_cdf(x),
            Marginal::ChiSquared { df } => ChiSquared::new(df).expect("valid df").cdf(x),
            Marginal::FisherF { df1, df2 } => FisherSnedecor::new(df1, df2).expect("valid df").cdf(x),
            Marginal::Pareto { scale, shape } => {
                if x < scale {
                    0.0
                } else {
                    1.0 - (scale / x).powf(shape)
                }
            }
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            Marginal::StandardNormal => norm_pdf(x),
            Marginal::ChiSquared { df } => ChiSquared::new(df).expect("valid df").pdf(x),
            Marginal::FisherF { df1, df2 } => FisherSnedecor::new(df1, df2).expect("valid df").pdf(x),
            Marginal::Pareto { scale, shape } => {
                if x < scale {
                    0.0
                } else {
                    shape * scale.powf(shape) / x.powf(shape + 1.0)
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Marginal::StandardNormal => 0.0,
            Marginal::ChiSquared { df } => df,
            Marginal::FisherF { df2, .. } => {
                if df2 > 2.0 {
                    df2 / (df2 - 2.0)
                } else {
                    f64::INFINITY
                }
            }
            Marginal::Pareto { scale, shape } => {
                if shape > 1.0 {
                    shape * scale / (shape - 1.0)
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// Quantile function. Normal and Pareto use closed forms, χ²(1) reduces
    /// to a squared normal quantile, the rest are inverted numerically to an
    /// absolute/relative accuracy of about 1e-12.
    pub fn quantile(&self, u: f64) -> f64 {
        assert!((0.0..=1.0).contains(&u), "probability out of range: {u}");
        match *self {
            Marginal::StandardNormal => norm_quantile(u),
            Marginal::Pareto { scale, shape } => scale * (1.0 - u).powf(-1.0 / shape),
            Marginal::ChiSquared { df: 1.0 } => {
                let z = norm_quantile(0.5 + 0.5 * u);
                z * z
            }
            Marginal::ChiSquared { .. } | Marginal::FisherF { .. } => {
                if u == 0.0 {
                    return 0.0;
                }
                if u == 1.0 {
                    return f64::INFINITY;
                }
                self.invert_positive(u)
            }
        }
    }

    /// Safeguarded Newton on a bracket for a distribution supported on (0, ∞).
    fn invert_positive(&self, u: f64) -> f64 {
        let mean = self.mean().max(1.0);
        let mut lo = 0.0_f64;
        let mut hi = mean;
        while self.cdf(hi) < u {
            lo = hi;
            hi *= 2.0;
            if hi > 1e300 {
                return f64::INFINITY;
            }
        }
        let mut x = 0.5 * (lo + hi);
        for _ in 0..200 {
            let f = self.cdf(x) - u;
            if f == 0.0 {
                return x;
            }
            if f < 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let pdf = self.pdf(x);
            let newton = if pdf > 0.0 && pdf.is_finite() {
                x - f / pdf
            } else {
                f64::NAN
            };
            let next = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            let step = (next - x).abs();
            x = next;
            if step <= 1e-13 * x.abs().max(1e-300) || hi - lo <= 4.0 * f64::EPSILON * hi {
                break;
            }
        }
        x
    }
}

/// Upper-tail probability of a χ² variable with `df` degrees of freedom.
pub fn chi_squared_sf(x: f64, df: f64) -> f64 {
    1.0 - ChiSquared::new(df).expect("valid df").cdf(x)
}
