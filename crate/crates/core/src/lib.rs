//! Robust linear regression under cellwise and casewise contamination.
//!
//! The pipeline filters cellwise outliers with a consistent univariate
//! filter, estimates location and scatter of the filtered data with a
//! generalized S-estimator, and reads the regression coefficients off the
//! estimated scatter. Inference uses a plug-in sandwich covariance.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dist;
pub mod dummy;
pub mod error;
pub mod filter;
pub mod linalg;
pub mod mask;
pub mod regress;
pub mod scatter;
pub mod seed;
pub mod simulate;

pub use error::{Error, Result};
pub use mask::Mask;
pub use nalgebra;
