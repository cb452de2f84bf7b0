use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::contaminate::{contaminate_casewise, contaminate_cellwise};
use super::design::{
    dichotomize, multivariate_normal, nonnormal_marginal, random_beta, random_correlation, transform_column,
};
use crate::dist::Marginal;
use crate::dummy::{alternating_fit, AlternatingOptions};
use crate::error::{Error, Result};
use crate::regress::{fit, FitOptions, Method};
use crate::seed::SeedTree;

/// Contamination mechanism of a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Contamination {
    Clean,
    Cellwise,
    Casewise,
}

impl Contamination {
    pub fn label(self) -> &'static str {
        match self {
            Contamination::Clean => "clean",
            Contamination::Cellwise => "cellwise",
            Contamination::Casewise => "casewise",
        }
    }
}

impl std::str::FromStr for Contamination {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "clean" => Ok(Contamination::Clean),
            "cellwise" => Ok(Contamination::Cellwise),
            "casewise" => Ok(Contamination::Casewise),
            other => Err(Error::invalid(format!("unknown scenario '{other}'"))),
        }
    }
}

/// Marginal laws of the continuous covariates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovariateModel {
    Normal,
    /// Gaussian copula with the block marginals of [`nonnormal_marginal`].
    NonNormal,
}

impl std::str::FromStr for CovariateModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "normal" => Ok(CovariateModel::Normal),
            "nonnormal" | "non-normal" => Ok(CovariateModel::NonNormal),
            other => Err(Error::invalid(format!("unknown covariate model '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub n: usize,
    /// Continuous covariates.
    pub p_x: usize,
    /// Dummy covariates; zero for the continuous design.
    pub p_d: usize,
    pub condition_number: f64,
    pub beta_radius: f64,
    pub sigma_eps: f64,
    pub contamination: Contamination,
    pub epsilon: f64,
    pub k: f64,
    /// Leverage of casewise outliers; `None` picks 8 for the continuous
    /// design and 7 for the mixed one.
    pub casewise_size: Option<f64>,
    pub replicates: usize,
    pub seed: u64,
    pub covariate_model: CovariateModel,
    /// Ones-probabilities of the dummies, one per dummy column.
    pub dummy_thresholds: Vec<f64>,
}

impl ScenarioConfig {
    /// Continuous design with `p` normal covariates, clean data.
    pub fn continuous(n: usize, p: usize) -> Self {
        ScenarioConfig {
            n,
            p_x: p,
            p_d: 0,
            condition_number: 100.0,
            beta_radius: 10.0,
            sigma_eps: 0.5,
            contamination: Contamination::Clean,
            epsilon: 0.0,
            k: 0.0,
            casewise_size: None,
            replicates: 200,
            seed: 0,
            covariate_model: CovariateModel::Normal,
            dummy_thresholds: Vec::new(),
        }
    }

    /// Twelve continuous covariates and three dummies with ones-probabilities
    /// 1/4, 1/3 and 1/2.
    pub fn mixed(n: usize) -> Self {
        ScenarioConfig {
            p_x: 12,
            p_d: 3,
            dummy_thresholds: vec![0.25, 1.0 / 3.0, 0.5],
            ..Self::continuous(n, 12)
        }
    }

    pub fn with_contamination(mut self, contamination: Contamination, epsilon: f64, k: f64) -> Self {
        self.contamination = contamination;
        self.epsilon = epsilon;
        self.k = k;
        self
    }

    pub fn p(&self) -> usize {
        self.p_x + self.p_d
    }

    pub fn casewise_size(&self) -> f64 {
        self.casewise_size.unwrap_or(if self.p_d > 0 { 7.0 } else { 8.0 })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p_x == 0 {
            return Err(Error::invalid("n and p_x must be positive"));
        }
        if self.p() < 2 {
            return Err(Error::invalid("the design needs at least two covariates"));
        }
        if !(0.0..0.5).contains(&self.epsilon) {
            return Err(Error::invalid(format!("epsilon {} outside [0, 0.5)", self.epsilon)));
        }
        if !(self.k >= 0.0) {
            return Err(Error::invalid("k must be non-negative"));
        }
        if self.replicates == 0 {
            return Err(Error::invalid("at least one replicate is required"));
        }
        if !(self.sigma_eps > 0.0 && self.beta_radius >= 0.0) {
            return Err(Error::invalid("sigma_eps must be positive and the radius non-negative"));
        }
        if self.dummy_thresholds.len() != self.p_d {
            return Err(Error::invalid("one threshold per dummy column is required"));
        }
        if self.p_d > 0 && self.covariate_model == CovariateModel::NonNormal {
            return Err(Error::invalid(
                "non-normal covariates are only defined for the continuous design",
            ));
        }
        if self.contamination == Contamination::Casewise && self.covariate_model == CovariateModel::NonNormal {
            return Err(Error::invalid("casewise contamination needs normal covariates"));
        }
        Ok(())
    }
}

/// One simulated data set.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    /// Dummy covariates, `n × p_d` (zero columns for the continuous design).
    pub d: DMatrix<f64>,
    pub y: DVector<f64>,
    pub beta_x: DVector<f64>,
    pub beta_d: DVector<f64>,
    /// Joint correlation of the continuous covariates and latent dummies.
    pub sigma: DMatrix<f64>,
    pub marginals: Vec<Marginal>,
}

impl Dataset {
    /// True slopes `(β_x, β_d)`.
    pub fn beta(&self) -> DVector<f64> {
        let (px, pd) = (self.beta_x.len(), self.beta_d.len());
        DVector::from_fn(
            px + pd,
            |j, _| if j < px { self.beta_x[j] } else { self.beta_d[j - px] },
        )
    }

    /// `[X | D]`.
    pub fn design(&self) -> DMatrix<f64> {
        let (n, px) = self.x.shape();
        let pd = self.d.ncols();
        DMatrix::from_fn(
            n,
            px + pd,
            |i, j| if j < px { self.x[(i, j)] } else { self.d[(i, j - px)] },
        )
    }

    /// `E(Y)` under the clean model.
    pub fn response_mean(&self, thresholds: &[f64]) -> f64 {
        let ex: f64 = self
            .marginals
            .iter()
            .zip(self.beta_x.iter())
            .map(|(m, b)| m.mean() * b)
            .sum();
        let ed: f64 = thresholds.iter().zip(self.beta_d.iter()).map(|(p, b)| p * b).sum();
        ex + ed
    }
}

/// Draw a clean data set: correlation, slopes, covariates and responses.
pub fn gen_clean<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<Dataset> {
    cfg.validate()?;
    let (n, px, pd) = (cfg.n, cfg.p_x, cfg.p_d);
    let sigma = random_correlation(cfg.p(), cfg.condition_number, rng)?;
    let beta = random_beta(cfg.p(), cfg.beta_radius, rng);
    let latent = multivariate_normal(n, &sigma, rng)?;
    let mut x = latent.columns(0, px).into_owned();
    let marginals: Vec<Marginal> = (0..px)
        .map(|j| match cfg.covariate_model {
            CovariateModel::Normal => Marginal::StandardNormal,
            CovariateModel::NonNormal => nonnormal_marginal(j),
        })
        .collect();
    for (j, &law) in marginals.iter().enumerate() {
        transform_column(&mut x, j, law);
    }
    let d = dichotomize(&latent.columns(px, pd).into_owned(), &cfg.dummy_thresholds)?;
    let beta_x = beta.rows(0, px).into_owned();
    let beta_d = beta.rows(px, pd).into_owned();
    let noise = Normal::new(0.0, cfg.sigma_eps).map_err(|e| Error::invalid(e.to_string()))?;
    let y = &x * &beta_x + &d * &beta_d + DVector::from_fn(n, |_, _| noise.sample(rng));
    Ok(Dataset {
        x,
        d,
        y,
        beta_x,
        beta_d,
        sigma,
        marginals,
    })
}

/// Apply the scenario's contamination to a clean data set.
pub fn contaminate<R: Rng + ?Sized>(cfg: &ScenarioConfig, data: &mut Dataset, rng: &mut R) -> Result<()> {
    match cfg.contamination {
        Contamination::Clean => Ok(()),
        Contamination::Cellwise => {
            let values: Vec<f64> = data
                .marginals
                .iter()
                .map(|&law| match cfg.covariate_model {
                    // Unit-variance normal covariates: E + k·SD = k.
                    CovariateModel::Normal => cfg.k,
                    CovariateModel::NonNormal => cfg.k * law.quantile(0.999),
                })
                .collect();
            let response = data.response_mean(&cfg.dummy_thresholds) + cfg.k * cfg.sigma_eps;
            contaminate_cellwise(&mut data.x, &mut data.y, cfg.epsilon, &values, response, rng).map(|_| ())
        }
        Contamination::Casewise => {
            let px = cfg.p_x;
            let sigma_x = data.sigma.view((0, 0), (px, px)).into_owned();
            let offset = &data.d * &data.beta_d;
            contaminate_casewise(
                &mut data.x,
                &mut data.y,
                &offset,
                cfg.epsilon,
                cfg.k,
                cfg.casewise_size(),
                &sigma_x,
                &data.beta_x,
                cfg.sigma_eps,
                rng,
            )
            .map(|_| ())
        }
    }
}

/// Generate and contaminate the data of replicate `r`.
pub fn replicate_data(cfg: &ScenarioConfig, r: usize) -> Result<Dataset> {
    let node = SeedTree::new(cfg.seed).index(r as u64);
    let mut data = gen_clean(cfg, &mut node.child("data").rng())?;
    contaminate(cfg, &mut data, &mut node.child("contam").rng())?;
    Ok(data)
}

/// Slope estimates of one fit, with confidence intervals where available.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    /// `(β_x, β_d)`.
    pub slopes: DVector<f64>,
    /// Intervals for the leading slopes; may cover fewer than all of them.
    pub intervals: Vec<(f64, f64)>,
}

/// A regression estimator under study.
pub trait Estimator: Sync {
    fn label(&self) -> String;
    fn estimate(&self, data: &Dataset, seed: u64) -> Result<Estimate>;
}

/// A [`Method`] applied to `[X | D]`, dummies treated as ordinary covariates.
#[derive(Debug, Clone)]
pub struct MethodEstimator {
    pub method: Method,
    pub options: FitOptions,
}

impl MethodEstimator {
    pub fn new(method: Method) -> Self {
        MethodEstimator {
            method,
            options: FitOptions::default(),
        }
    }
}

impl Estimator for MethodEstimator {
    fn label(&self) -> String {
        self.method.label().to_string()
    }

    fn estimate(&self, data: &Dataset, seed: u64) -> Result<Estimate> {
        let opts = FitOptions {
            seed,
            ..self.options.clone()
        };
        let f = fit(self.method, &data.design(), &data.y, &opts)?;
        // Intervals are reported for the continuous slopes only.
        let intervals = (1..=data.x.ncols()).map(|j| (f.ci_lower[j], f.ci_upper[j])).collect();
        Ok(Estimate {
            slopes: f.slopes,
            intervals,
        })
    }
}

/// The alternating fit for designs with dummies.
#[derive(Debug, Clone, Default)]
pub struct AlternatingEstimator {
    pub options: AlternatingOptions,
}

impl Estimator for AlternatingEstimator {
    fn label(&self) -> String {
        format!("{}-alt", self.options.inner.label())
    }

    fn estimate(&self, data: &Dataset, seed: u64) -> Result<Estimate> {
        let mut opts = self.options.clone();
        opts.fit.seed = seed;
        let f = alternating_fit(&data.x, &data.d, &data.y, &opts)?;
        let inner = &f.inner_fit;
        let intervals = (1..=data.x.ncols())
            .map(|j| (inner.ci_lower[j], inner.ci_upper[j]))
            .collect();
        let mut slopes = DVector::zeros(data.x.ncols() + data.d.ncols());
        slopes.rows_mut(0, f.beta_x.len()).copy_from(&f.beta_x);
        slopes.rows_mut(f.beta_x.len(), f.beta_d.len()).copy_from(&f.beta_d);
        Ok(Estimate { slopes, intervals })
    }
}

/// Per-replicate metrics of one estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicateRecord {
    pub mse: f64,
    pub coverage: Option<f64>,
    pub ci_length: Option<f64>,
}

impl ReplicateRecord {
    pub fn score(estimate: &Estimate, beta: &DVector<f64>) -> Result<Self> {
        if estimate.slopes.len() != beta.len() || estimate.intervals.len() > beta.len() {
            return Err(Error::Internal("estimate and truth have different lengths".into()));
        }
        let mse = (&estimate.slopes - beta).norm_squared() / beta.len() as f64;
        let m = estimate.intervals.len();
        let (coverage, ci_length) = if m == 0 {
            (None, None)
        } else {
            let hits = estimate
                .intervals
                .iter()
                .zip(beta.iter())
                .filter(|((lo, hi), b)| lo <= *b && *b <= hi)
                .count();
            let len: f64 = estimate.intervals.iter().map(|(lo, hi)| hi - lo).sum();
            (Some(hits as f64 / m as f64), Some(len / m as f64))
        };
        Ok(ReplicateRecord {
            mse,
            coverage,
            ci_length,
        })
    }
}

/// Monte Carlo averages of one estimator. Failed replicates are excluded
/// from the averages and counted.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSummary {
    pub label: String,
    pub mse_bar: f64,
    pub cr_bar: Option<f64>,
    pub cil_bar: Option<f64>,
    pub succeeded: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub config: ScenarioConfig,
    pub summaries: Vec<EstimatorSummary>,
    /// `records[r][e]`: replicate `r`, estimator `e`; `Err` holds the message
    /// of a failed fit.
    pub records: Vec<Vec<std::result::Result<ReplicateRecord, String>>>,
}

impl ScenarioResult {
    pub fn summary(&self, label: &str) -> Option<&EstimatorSummary> {
        self.summaries.iter().find(|s| s.label == label)
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// Run all replicates of a scenario. Every replicate draws from its own seed
/// node, and all estimators in a replicate share one fit seed, so the result
/// does not depend on scheduling or on which estimators are present.
pub fn run_scenario(cfg: &ScenarioConfig, estimators: &[&dyn Estimator]) -> Result<ScenarioResult> {
    cfg.validate()?;
    if estimators.is_empty() {
        return Err(Error::invalid("no estimators given"));
    }
    let records: Vec<Vec<std::result::Result<ReplicateRecord, String>>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| -> Result<Vec<_>> {
            let data = replicate_data(cfg, r)?;
            let beta = data.beta();
            let fit_seed = SeedTree::new(cfg.seed).index(r as u64).child("fit").seed();
            Ok(estimators
                .iter()
                .map(|e| {
                    e.estimate(&data, fit_seed)
                        .and_then(|est| ReplicateRecord::score(&est, &beta))
                        .map_err(|err| err.to_string())
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let summaries = estimators
        .iter()
        .enumerate()
        .map(|(e, est)| {
            let ok: Vec<&ReplicateRecord> = records.iter().filter_map(|row| row[e].as_ref().ok()).collect();
            EstimatorSummary {
                label: est.label(),
                mse_bar: mean(ok.iter().map(|r| r.mse)).unwrap_or(f64::NAN),
                cr_bar: mean(ok.iter().filter_map(|r| r.coverage)),
                cil_bar: mean(ok.iter().filter_map(|r| r.ci_length)),
                succeeded: ok.len(),
                failed: records.len() - ok.len(),
            }
        })
        .collect();
    Ok(ScenarioResult {
        config: cfg.clone(),
        summaries,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Oracle;

    impl Estimator for Oracle {
        fn label(&self) -> String {
            "oracle".into()
        }

        fn estimate(&self, data: &Dataset, _seed: u64) -> Result<Estimate> {
            let beta = data.beta();
            Ok(Estimate {
                intervals: beta.iter().map(|&b| (b, b)).collect(),
                slopes: beta,
            })
        }
    }

    #[test]
    fn oracle_has_zero_mse() {
        let cfg = ScenarioConfig {
            replicates: 4,
            ..ScenarioConfig::continuous(50, 3)
        };
        let res = run_scenario(&cfg, &[&Oracle]).unwrap();
        let s = res.summary("oracle").unwrap();
        assert_eq!(s.mse_bar, 0.0);
        assert_eq!(s.cr_bar, Some(1.0));
        assert_eq!(s.cil_bar, Some(0.0));
    }

    #[test]
    fn clean_data_follow_the_model() {
        let cfg = ScenarioConfig {
            seed: 3,
            ..ScenarioConfig::continuous(20_000, 4)
        };
        let data = replicate_data(&cfg, 0).unwrap();
        assert!((data.beta().norm() - 10.0).abs() < 1e-12);
        let resid = &data.y - &data.x * &data.beta_x;
        let sd = (resid.norm_squared() / resid.len() as f64).sqrt();
        assert!((sd - 0.5).abs() < 0.01, "{sd}");
    }

    #[test]
    fn mixed_design_shapes() {
        let cfg = ScenarioConfig {
            seed: 5,
            ..ScenarioConfig::mixed(400)
        };
        let data = replicate_data(&cfg, 0).unwrap();
        assert_eq!(data.x.shape(), (400, 12));
        assert_eq!(data.d.shape(), (400, 3));
        assert!(data.d.iter().all(|&v| v == 0.0 || v == 1.0));
        let resid = &data.y - &data.x * &data.beta_x - &data.d * &data.beta_d;
        assert!(resid.amax() < 3.0);
    }

    #[test]
    fn nonnormal_pareto_block_respects_support() {
        let cfg = ScenarioConfig {
            covariate_model: CovariateModel::NonNormal,
            ..ScenarioConfig::continuous(500, 15)
        };
        let data = replicate_data(&cfg, 0).unwrap();
        for j in 12..15 {
            assert!(data.x.column(j).min() >= 1.0);
        }
    }

    #[test]
    fn invalid_configs() {
        let base = ScenarioConfig::continuous(100, 5);
        assert!(ScenarioConfig {
            epsilon: 0.5,
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(ScenarioConfig {
            replicates: 0,
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(ScenarioConfig {
            covariate_model: CovariateModel::NonNormal,
            contamination: Contamination::Casewise,
            ..base
        }
        .validate()
        .is_err());
    }

    #[test]
    fn adding_an_estimator_keeps_data_and_fits() {
        let cfg = ScenarioConfig {
            replicates: 3,
            seed: 9,
            ..ScenarioConfig::continuous(60, 3)
        }
        .with_contamination(Contamination::Cellwise, 0.05, 5.0);
        let ls = MethodEstimator::new(Method::LeastSquares);
        let a = run_scenario(&cfg, &[&ls]).unwrap();
        let b = run_scenario(&cfg, &[&Oracle, &ls]).unwrap();
        assert_eq!(a.summaries[0], b.summaries[1]);
    }
}
