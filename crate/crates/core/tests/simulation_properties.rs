use robust3s::dist::Marginal;
use robust3s::regress::Method;
use robust3s::seed::SeedTree;
use robust3s::simulate::{
    contaminated_count, random_correlation, replicate_data, run_scenario, Contamination, CovariateModel, Estimator,
    MethodEstimator, ScenarioConfig,
};

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
}

#[test]
fn scenario_results_do_not_depend_on_thread_count() {
    let cfg = ScenarioConfig {
        replicates: 6,
        seed: 21,
        ..ScenarioConfig::continuous(80, 3)
    }
    .with_contamination(Contamination::Cellwise, 0.05, 5.0);
    let est = [
        MethodEstimator::new(Method::ThreeStep),
        MethodEstimator::new(Method::LeastSquares),
    ];
    let refs: Vec<&dyn Estimator> = est.iter().map(|e| e as &dyn Estimator).collect();
    let one = pool(1).install(|| run_scenario(&cfg, &refs).unwrap());
    let four = pool(4).install(|| run_scenario(&cfg, &refs).unwrap());
    assert_eq!(one, four);
}

#[test]
fn cellwise_contamination_counts_are_exact() {
    let cfg = ScenarioConfig {
        seed: 2,
        ..ScenarioConfig::continuous(300, 15)
    }
    .with_contamination(Contamination::Cellwise, 0.05, 10.0);
    let data = replicate_data(&cfg, 0).unwrap();
    assert_eq!(
        data.x.iter().filter(|&&v| v == 10.0).count(),
        contaminated_count(0.05, 4500)
    );
    assert_eq!(contaminated_count(0.05, 4500), 225);
    assert_eq!(data.y.iter().filter(|&&v| v == 5.0).count(), 15);
}

#[test]
fn casewise_rows_share_the_leverage_point() {
    let cfg = ScenarioConfig {
        seed: 4,
        ..ScenarioConfig::continuous(300, 5)
    }
    .with_contamination(Contamination::Casewise, 0.10, 3.0);
    let data = replicate_data(&cfg, 0).unwrap();
    let sigma_inv = data.sigma.clone().try_inverse().unwrap();
    let bad: Vec<usize> = (0..300)
        .filter(|&i| {
            let r = data.x.row(i).transpose();
            ((r.transpose() * &sigma_inv * &r)[(0, 0)] - 64.0).abs() < 1e-8
        })
        .collect();
    assert_eq!(bad.len(), 30);
}

#[test]
fn correlation_condition_numbers_hit_the_target() {
    for s in 0..50 {
        let mut rng = SeedTree::new(s).rng();
        let r = random_correlation(15, 100.0, &mut rng).unwrap();
        let eig = r.symmetric_eigenvalues();
        let cond = eig.max() / eig.min();
        assert!((80.0..=125.0).contains(&cond), "seed {s}: {cond}");
        assert!((0..15).all(|i| r[(i, i)] == 1.0));
    }
}

#[test]
fn transformed_marginals_pass_kolmogorov_smirnov() {
    let cfg = ScenarioConfig {
        seed: 8,
        covariate_model: CovariateModel::NonNormal,
        ..ScenarioConfig::continuous(10_000, 15)
    };
    let data = replicate_data(&cfg, 0).unwrap();
    let bound = 1.36 / (10_000f64).sqrt() * 1.5;
    for (j, law) in data.marginals.iter().enumerate() {
        let mut col: Vec<f64> = data.x.column(j).iter().copied().collect();
        col.sort_by(f64::total_cmp);
        let n = col.len() as f64;
        let ks = col
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let f = law.cdf(v);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < bound, "column {j} ({law:?}): {ks}");
    }
    assert_eq!(data.marginals[14], Marginal::Pareto { scale: 1.0, shape: 3.0 });
}

#[test]
fn ls_error_shrinks_like_one_over_n() {
    let ls = MethodEstimator::new(Method::LeastSquares);
    let mse = |n: usize| {
        let cfg = ScenarioConfig {
            replicates: 400,
            seed: 13,
            ..ScenarioConfig::continuous(n, 15)
        };
        run_scenario(&cfg, &[&ls]).unwrap().summaries[0].mse_bar
    };
    let (a, b, c) = (mse(150), mse(300), mse(500));
    // Exact LS risk is σ²·tr(Σ⁻¹)/(n − p − 2) per slope: the ratios follow
    // (n − 17) rather than n.
    let within = |r: f64, target: f64| (r / target - 1.0).abs() < 0.3;
    assert!(within(a / b, 300.0 / 150.0), "{a} {b}");
    assert!(within(b / c, 500.0 / 300.0), "{b} {c}");
}
