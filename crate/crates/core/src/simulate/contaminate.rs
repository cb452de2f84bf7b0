use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::design::least_favorable_direction;
use crate::error::{Error, Result};

/// Number of items out of `total` hit by a contamination fraction; the tiny
/// offset keeps products such as `0.05 · 4500` from flooring to 224.
pub fn contaminated_count(epsilon: f64, total: usize) -> usize {
    (epsilon * total as f64 + 1e-9).floor() as usize
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(0.0..0.5).contains(&epsilon) {
        return Err(Error::invalid(format!(
            "contamination fraction {epsilon} outside [0, 0.5)"
        )));
    }
    Ok(())
}

/// Which cells and responses were replaced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CellwiseRecord {
    /// `(row, column)` pairs.
    pub cells: Vec<(usize, usize)>,
    pub responses: Vec<usize>,
}

/// Replace `⌊ε·n·p⌋` covariate cells, chosen uniformly without replacement,
/// by `column_values[j]`, and independently `⌊ε·n⌋` responses by
/// `response_value`.
pub fn contaminate_cellwise<R: Rng + ?Sized>(
    x: &mut DMatrix<f64>,
    y: &mut DVector<f64>,
    epsilon: f64,
    column_values: &[f64],
    response_value: f64,
    rng: &mut R,
) -> Result<CellwiseRecord> {
    check_epsilon(epsilon)?;
    let (n, p) = x.shape();
    if column_values.len() != p || y.len() != n {
        return Err(Error::invalid("dimension mismatch in cellwise contamination"));
    }
    let n_cells = contaminated_count(epsilon, n * p);
    let n_resp = contaminated_count(epsilon, n);
    let mut record = CellwiseRecord::default();
    for flat in sample(rng, n * p, n_cells).into_iter() {
        let (i, j) = (flat / p, flat % p);
        x[(i, j)] = column_values[j];
        record.cells.push((i, j));
    }
    for i in sample(rng, n, n_resp).into_iter() {
        y[i] = response_value;
        record.responses.push(i);
    }
    record.cells.sort_unstable();
    record.responses.sort_unstable();
    Ok(record)
}

/// Replace `⌊ε·n⌋` cases by leverage outliers `c·v`, with `v` the
/// least-favorable direction of `sigma_x`, and responses
/// `(c·v)ᵀβ + offset_i + N(k, σ²)`. `offset` carries any part of the linear
/// predictor not driven by the replaced covariates. Returns the rows hit.
#[allow(clippy::too_many_arguments)]
pub fn contaminate_casewise<R: Rng + ?Sized>(
    x: &mut DMatrix<f64>,
    y: &mut DVector<f64>,
    offset: &DVector<f64>,
    epsilon: f64,
    k: f64,
    c: f64,
    sigma_x: &DMatrix<f64>,
    beta: &DVector<f64>,
    sigma_eps: f64,
    rng: &mut R,
) -> Result<Vec<usize>> {
    check_epsilon(epsilon)?;
    let (n, p) = x.shape();
    if sigma_x.shape() != (p, p) || beta.len() != p || y.len() != n || offset.len() != n {
        return Err(Error::invalid("dimension mismatch in casewise contamination"));
    }
    let v = least_favorable_direction(sigma_x) * c;
    let fitted = v.dot(beta);
    let noise = Normal::new(k, sigma_eps).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rows: Vec<usize> = sample(rng, n, contaminated_count(epsilon, n)).into_vec();
    rows.sort_unstable();
    for &i in &rows {
        x.row_mut(i).copy_from(&v.transpose());
        y[i] = fitted + offset[i] + noise.sample(rng);
    }
    Ok(rows)
}
