//! Monte Carlo designs: random correlation and slope draws, clean data,
//! cellwise and casewise contamination, and the scenario runner computing
//! mean squared error, coverage rate and interval length.

pub mod contaminate;
pub mod design;
pub mod scenario;

pub use contaminate::{contaminate_casewise, contaminate_cellwise, contaminated_count, CellwiseRecord};
pub use design::{
    dichotomize, least_favorable_direction, multivariate_normal, nonnormal_marginal, random_beta, random_correlation,
    transform_column,
};
pub use scenario::{
    contaminate, gen_clean, replicate_data, run_scenario, AlternatingEstimator, Contamination, CovariateModel, Dataset,
    Estimate, Estimator, EstimatorSummary, MethodEstimator, ReplicateRecord, ScenarioConfig, ScenarioResult,
};
