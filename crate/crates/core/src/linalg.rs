//! Small dense helpers shared by the estimators.
//!
//! The hot loops of the scatter estimators work on flat row-major buffers
//! through [`Cholesky`]; everything else goes through `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Smallest accepted pivot relative to the largest diagonal entry.
const RELATIVE_PIVOT_FLOOR: f64 = 1e-13;

/// Lower Cholesky factor of a symmetric positive-definite matrix, stored
/// row-major in a flat buffer.
#[derive(Debug, Clone)]
pub struct Cholesky {
    dim: usize,
    lower: Vec<f64>,
}

impl Cholesky {
    /// Factor the `dim`×`dim` row-major matrix `a`. Returns `None` when a pivot
    /// falls below the relative floor, i.e. the matrix is not numerically SPD.
    pub fn factor(a: &[f64], dim: usize) -> Option<Self> {
        debug_assert_eq!(a.len(), dim * dim);
        let max_diag = (0..dim).map(|i| a[i * dim + i]).fold(0.0_f64, f64::max);
        if !(max_diag > 0.0) || !max_diag.is_finite() {
            return None;
        }
        let floor = max_diag * RELATIVE_PIVOT_FLOOR;
        let mut l = vec![0.0; dim * dim];
        for j in 0..dim {
            let mut diag = a[j * dim + j];
            for k in 0..j {
                diag -= l[j * dim + k] * l[j * dim + k];
            }
            if !(diag > floor) {
                return None;
            }
            let ljj = diag.sqrt();
            l[j * dim + j] = ljj;
            for i in (j + 1)..dim {
                let mut v = a[i * dim + j];
                for k in 0..j {
                    v -= l[i * dim + k] * l[j * dim + k];
                }
                l[i * dim + j] = v / ljj;
            }
        }
        Some(Cholesky { dim, lower: l })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Solve `L y = r` in place.
    pub fn forward(&self, r: &mut [f64]) {
        let n = self.dim;
        for i in 0..n {
            let row = &self.lower[i * n..i * n + i];
            let mut v = r[i];
            for (lik, rk) in row.iter().zip(r.iter()) {
                v -= lik * rk;
            }
            r[i] = v / self.lower[i * n + i];
        }
    }

    /// Solve `Lᵀ x = y` in place.
    pub fn backward(&self, y: &mut [f64]) {
        let n = self.dim;
        for i in (0..n).rev() {
            let mut v = y[i];
            for (k, yk) in y.iter().enumerate().skip(i + 1) {
                v -= self.lower[k * n + i] * yk;
            }
            y[i] = v / self.lower[i * n + i];
        }
    }

    /// Solve `A x = r` in place.
    pub fn solve_in_place(&self, r: &mut [f64]) {
        self.forward(r);
        self.backward(r);
    }

    /// `rᵀ A⁻¹ r`, using `scratch` (length `dim`) as workspace.
    pub fn quadratic_form(&self, r: &[f64], scratch: &mut [f64]) -> f64 {
        scratch[..self.dim].copy_from_slice(&r[..self.dim]);
        self.forward(&mut scratch[..self.dim]);
        scratch[..self.dim].iter().map(|v| v * v).sum()
    }

    pub fn log_det(&self) -> f64 {
        (0..self.dim).map(|i| self.lower[i * self.dim + i].ln()).sum::<f64>() * 2.0
    }

    /// Rough condition number estimate from the pivots.
    pub fn pivot_condition(&self) -> f64 {
        let diag: Vec<f64> = (0..self.dim).map(|i| self.lower[i * self.dim + i]).collect();
        let max = diag.iter().cloned().fold(0.0, f64::max);
        let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        (max / min).powi(2)
    }
}

/// Copy a nalgebra matrix into a flat row-major buffer.
pub fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = m.shape();
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub fn from_row_major(data: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, data)
}

/// 2-norm condition number of a symmetric matrix (ratio of extreme absolute eigenvalues).
pub fn symmetric_condition(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(m.clone());
    let mut max = 0.0_f64;
    let mut min = f64::INFINITY;
    for v in eig.eigenvalues.iter() {
        max = max.max(v.abs());
        min = min.min(v.abs());
    }
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solve `a x = b` for symmetric positive-definite `a`; on failure report the
/// condition number of `a` in the error.
pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>, context: &str) -> Result<DVector<f64>> {
    let chol = a.clone().cholesky().ok_or_else(|| Error::Singular {
        context: context.to_string(),
        condition: symmetric_condition(a),
    })?;
    Ok(chol.solve(b))
}

/// Inverse of a symmetric positive-definite matrix.
pub fn spd_inverse(a: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let flat = to_row_major(a);
    match Cholesky::factor(&flat, n) {
        Some(ch) => {
            let mut inv = DMatrix::zeros(n, n);
            let mut col = vec![0.0; n];
            for j in 0..n {
                col.iter_mut().for_each(|v| *v = 0.0);
                col[j] = 1.0;
                ch.solve_in_place(&mut col);
                for i in 0..n {
                    inv[(i, j)] = col[i];
                }
            }
            Ok(symmetrize(&inv))
        }
        None => Err(Error::Singular {
            context: context.to_string(),
            condition: symmetric_condition(a),
        }),
    }
}

/// Inverse of a general square matrix via LU.
pub fn general_inverse(a: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    let cond = symmetric_condition(&symmetrize(a));
    if !cond.is_finite() || cond > 1e15 {
        return Err(Error::Singular {
            context: context.to_string(),
            condition: cond,
        });
    }
    a.clone().try_inverse().ok_or_else(|| Error::Singular {
        context: context.to_string(),
        condition: cond,
    })
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Sub-matrix picking rows `ri` and columns `ci`.
pub fn select(m: &DMatrix<f64>, ri: &[usize], ci: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(ri.len(), ci.len(), |a, b| m[(ri[a], ci[b])])
}

pub fn select_vec(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

/// Median with the `⌈m/2⌉`-th order statistic convention (no averaging).
pub fn low_median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(|a, b| a.total_cmp(b));
    values[values.len().div_ceil(2) - 1]
}

/// Conventional median (average of the two central order statistics).
pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Normalized median absolute deviation.
pub fn mad(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    let med = median(&mut v);
    let mut dev: Vec<f64> = values.iter().map(|x| (x - med).abs()).collect();
    1.482_602_218_505_602 * median(&mut dev)
}
