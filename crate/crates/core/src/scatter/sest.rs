use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{bisquare_psi, consistency_constant, gs_scale, LocationScatter, ScatterConfig};
use crate::error::{Error, Result};
use crate::linalg::{to_row_major, Cholesky};

/// One iterate: location, unit-determinant shape, scale and the squared
/// distances of every case under the shape.
#[derive(Debug, Clone)]
struct Candidate {
    m: Vec<f64>,
    v: Vec<f64>,
    s: f64,
    d: Vec<f64>,
}

impl Candidate {
    /// Volume criterion of the ellipsoid `{d ≤ d_(h)}` with unit-determinant
    /// shape, monotone in its volume.
    fn volume(&self, h: usize) -> f64 {
        let mut d = self.d.clone();
        let (_, v, _) = d.select_nth_unstable_by(h - 1, f64::total_cmp);
        *v
    }
}

struct Problem<'a> {
    z: &'a [f64],
    n: usize,
    q: usize,
    c: f64,
    c_all: Vec<f64>,
    b: f64,
}

impl Problem<'_> {
    fn row(&self, i: usize) -> &[f64] {
        &self.z[i * self.q..(i + 1) * self.q]
    }

    /// Weighted mean and covariance about that mean.
    fn moments(&self, weights: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        let q = self.q;
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return None;
        }
        let mut m = vec![0.0; q];
        for (i, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                for (mj, zj) in m.iter_mut().zip(self.row(i)) {
                    *mj += w * zj;
                }
            }
        }
        m.iter_mut().for_each(|v| *v /= total);
        let mut cov = vec![0.0; q * q];
        let mut r = vec![0.0; q];
        for (i, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                for ((rj, zj), mj) in r.iter_mut().zip(self.row(i)).zip(&m) {
                    *rj = zj - mj;
                }
                for a in 0..q {
                    let wa = w * r[a];
                    let row = &mut cov[a * q..a * q + a + 1];
                    for (cab, rb) in row.iter_mut().zip(&r[..=a]) {
                        *cab += wa * rb;
                    }
                }
            }
        }
        for a in 0..q {
            for b in 0..a {
                cov[a * q + b] /= total;
                cov[b * q + a] = cov[a * q + b];
            }
            cov[a * q + a] /= total;
        }
        Some((m, cov))
    }

    /// Normalize `cov` to unit determinant, compute distances and scale.
    fn candidate(&self, m: Vec<f64>, cov: Vec<f64>) -> Option<Candidate> {
        let q = self.q;
        let ch = Cholesky::factor(&cov, q)?;
        let factor = (ch.log_det() / q as f64).exp();
        let mut d = vec![0.0; self.n];
        let mut r = vec![0.0; q];
        let mut scratch = vec![0.0; q];
        for (i, di) in d.iter_mut().enumerate() {
            for ((rj, zj), mj) in r.iter_mut().zip(self.row(i)).zip(&m) {
                *rj = zj - mj;
            }
            *di = ch.quadratic_form(&r, &mut scratch) * factor;
        }
        let v: Vec<f64> = cov.iter().map(|x| x / factor).collect();
        let s = gs_scale(&d, &self.c_all, self.b).ok()?;
        Some(Candidate { m, v, s, d })
    }

    /// Coverage of the minimum-volume ellipsoid, `⌈(n + q + 1)/2⌉`.
    fn half(&self) -> usize {
        ((self.n + self.q + 1).div_ceil(2)).min(self.n)
    }

    /// Concentration step: plain mean and covariance of the `h` cases
    /// closest under the current candidate.
    fn concentrate(&self, cand: &Candidate) -> Option<Candidate> {
        let h = self.half();
        let mut order: Vec<usize> = (0..self.n).collect();
        order.select_nth_unstable_by(h - 1, |&a, &b| cand.d[a].total_cmp(&cand.d[b]).then(a.cmp(&b)));
        let mut w = vec![0.0; self.n];
        for &i in &order[..h] {
            w[i] = 1.0;
        }
        let (m, cov) = self.moments(&w)?;
        self.candidate(m, cov)
    }

    fn step(&self, cand: &Candidate) -> Option<Candidate> {
        let cs = self.c * cand.s;
        let w: Vec<f64> = cand.d.iter().map(|&d| bisquare_psi(d / cs)).collect();
        let (m, cov) = self.moments(&w)?;
        self.candidate(m, cov)
    }

    /// Start from an elemental subset, enlarged with random cases until its
    /// covariance is nonsingular.
    fn start(&self, seed: u64) -> Option<Candidate> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx: Vec<usize> = sample(&mut rng, self.n, self.q + 1).into_vec();
        loop {
            let mut w = vec![0.0; self.n];
            for &i in &idx {
                w[i] = 1.0;
            }
            if let Some((m, cov)) = self.moments(&w) {
                if let Some(c) = self.candidate(m, cov) {
                    return Some(c);
                }
            }
            if idx.len() >= self.n {
                return None;
            }
            let extra = loop {
                let i = rng.gen_range(0..self.n);
                if !idx.contains(&i) {
                    break i;
                }
            };
            idx.push(extra);
        }
    }

    /// Iterate until the distances under `s·V` settle.
    fn refine(&self, mut cand: Candidate, max_iter: usize, tol: f64) -> (Candidate, bool, usize) {
        for iter in 1..=max_iter {
            let Some(next) = self.step(&cand) else {
                return (cand, false, iter);
            };
            let change = next
                .d
                .iter()
                .zip(&cand.d)
                .map(|(&a, &b)| {
                    let (a, b) = (a / next.s, b / cand.s);
                    (a - b).abs() / (1.0 + b)
                })
                .fold(0.0, f64::max);
            cand = next;
            if change < tol {
                return (cand, true, iter);
            }
        }
        (cand, false, max_iter)
    }
}

fn check_finite(z: &DMatrix<f64>) -> Result<()> {
    for j in 0..z.ncols() {
        for i in 0..z.nrows() {
            if !z[(i, j)].is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
        }
    }
    Ok(())
}

/// Bisquare S-estimator of location and scatter for complete data.
///
/// The starting points are minimum-volume-ellipsoid candidates: elemental
/// subsets of size `dim + 1`, each improved by `concentration_steps`
/// concentration steps on the half-sample and ranked by ellipsoid volume.
/// The `best_candidates` of them are iterated to convergence with bisquare
/// weights and the one with the smallest scale is returned. Deterministic
/// given `seed`.
pub fn s_estimator_complete(z: &DMatrix<f64>, cfg: &ScatterConfig, seed: u64) -> Result<LocationScatter> {
    cfg.validate()?;
    let (n, q) = z.shape();
    if n == 0 || q == 0 {
        return Err(Error::EmptySample);
    }
    if n < 2 * q {
        return Err(Error::invalid(format!(
            "need at least {} cases for dimension {q}, got {n}",
            2 * q
        )));
    }
    check_finite(z)?;
    let flat = to_row_major(z);
    let c = consistency_constant(q, cfg.breakdown)?;
    let problem = Problem {
        z: &flat,
        n,
        q,
        c,
        c_all: vec![c; n],
        b: cfg.breakdown,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..cfg.subsamples).map(|_| rng.gen()).collect();
    let mut starts: Vec<(usize, f64, Candidate)> = seeds
        .par_iter()
        .enumerate()
        .filter_map(|(i, &s)| {
            let mut cand = problem.start(s)?;
            for _ in 0..cfg.concentration_steps {
                cand = problem.concentrate(&cand)?;
            }
            let volume = cand.volume(problem.half());
            Some((i, volume, cand))
        })
        .collect();
    if starts.is_empty() {
        return Err(Error::degenerate("every elemental subsample is singular"));
    }
    starts.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    starts.truncate(cfg.best_candidates);

    let refined: Vec<(Candidate, bool, usize)> = starts
        .into_par_iter()
        .map(|(_, _, cand)| problem.refine(cand, cfg.max_iter, cfg.tol))
        .collect();
    let (best, converged, iterations) = refined
        .into_iter()
        .reduce(|a, b| if b.0.s < a.0.s { b } else { a })
        .expect("at least one candidate");
    Ok(assemble(best, q, c, cfg.breakdown, converged, iterations))
}

fn assemble(best: Candidate, q: usize, c: f64, b: f64, converged: bool, iterations: usize) -> LocationScatter {
    let s = best.s;
    let mut scatter = DMatrix::from_row_slice(q, q, &best.v) * s;
    scatter = (&scatter + scatter.transpose()) * 0.5;
    let case_distances: Vec<f64> = best.d.iter().map(|d| d / s).collect();
    let case_weights = case_distances.iter().map(|&d| bisquare_psi(d / c) / 3.0).collect();
    LocationScatter {
        location: DVector::from_vec(best.m),
        scatter,
        gs_scale: s,
        case_dims: vec![q; case_distances.len()],
        case_distances,
        case_weights,
        converged,
        iterations,
        breakdown: b,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn normal(n: usize, q: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, q, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn recovers_identity() {
        let z = normal(2000, 4, 1);
        let fit = s_estimator_complete(&z, &ScatterConfig::default(), 7).unwrap();
        assert!(fit.converged);
        assert!(fit.location.amax() < 0.1);
        let dev = (&fit.scatter - DMatrix::identity(4, 4)).amax();
        assert!(dev < 0.15, "{}", fit.scatter);
        assert!(fit.constraint_residual().abs() < 1e-8);
    }

    #[test]
    fn deterministic() {
        let z = normal(200, 3, 2);
        let cfg = ScatterConfig::default();
        assert_eq!(
            s_estimator_complete(&z, &cfg, 5).unwrap(),
            s_estimator_complete(&z, &cfg, 5).unwrap()
        );
    }

    #[test]
    fn gross_outliers_get_zero_weight() {
        let mut z = normal(50, 2, 3);
        for i in 0..10 {
            z[(i, 0)] = 1e6 + i as f64;
            z[(i, 1)] = -1e6;
        }
        let fit = s_estimator_complete(&z, &ScatterConfig::default(), 1).unwrap();
        for i in 0..10 {
            assert_eq!(fit.case_weights[i], 0.0);
        }
        assert!(fit.location.amax() < 2.0);
    }

    #[test]
    fn too_few_cases() {
        let z = normal(5, 3, 4);
        assert!(s_estimator_complete(&z, &ScatterConfig::default(), 1).is_err());
    }
}
