use ipw_att::att::{estimate_att, estimate_att_from};
use ipw_att::propensity::{compute_weights, fit_logistic};
use ipw_att::scenario::{CovariateDistribution, ScenarioSpec};
use ipw_att::simulate::generate_dataset;

#[test]
fn large_sample_scenario_i_att() {
    let data = generate_dataset(&ScenarioSpec::preset("i").unwrap(), 100_000, 2021).unwrap();
    let fit = fit_logistic(&data).unwrap();
    let est = estimate_att(&data, &fit.weights, 0).unwrap();
    assert!((est.att + 0.78).abs() < 0.02, "{}", est.att);
    assert_eq!(est.att, est.mu1_hat - est.mu0_hat);
    assert_eq!(est.n_treated + est.n_control, data.n());
}

#[test]
fn treated_mean_is_unweighted() {
    let data = generate_dataset(&ScenarioSpec::preset("iii").unwrap(), 1000, 4).unwrap();
    let fit = fit_logistic(&data).unwrap();
    let est = estimate_att(&data, &fit.weights, 0).unwrap();
    let y = data.outcome(0).unwrap();
    let treated: Vec<f64> = y
        .iter()
        .zip(data.treatment())
        .filter(|(_, &t)| t)
        .map(|(y, _)| *y)
        .collect();
    let mean = treated.iter().sum::<f64>() / treated.len() as f64;
    assert!((est.mu1_hat - mean).abs() <= 1e-12);
}

/// Randomized design: no covariate effect on treatment or outcome, so the
/// ATT is the treatment coefficient and the true weights are a constant.
#[test]
fn randomized_design_is_consistent() {
    let spec = ScenarioSpec::new(
        CovariateDistribution::Normal { mean: 0.0 },
        (0.3, 0.0),
        (0.8, 0.0, 0.0),
        1.0,
    );
    let n = 100_000;
    let data = generate_dataset(&spec, n, 99).unwrap();
    let w = compute_weights(&[0.3, 0.0], &data).unwrap();
    let est = estimate_att(&data, &w, 0).unwrap();
    let se = (1.0 / est.n_treated as f64 + 1.0 / est.n_control as f64).sqrt();
    assert!((est.att - 0.8).abs() <= 3.0 * se, "{} ± {se}", est.att);
}

#[test]
fn hajek_ratio_arithmetic() {
    let est = estimate_att_from(
        &[true, true, false, false],
        &[2.0, 4.0, 1.0, 3.0],
        &[1.0, 1.0, 2.0, 1.0],
    )
    .unwrap();
    assert_eq!(est.mu1_hat, 3.0);
    assert!((est.mu0_hat - 5.0 / 3.0).abs() < 1e-15);
    assert!((est.att - 4.0 / 3.0).abs() < 1e-15);
}
