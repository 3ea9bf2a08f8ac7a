use ipw_att::att::estimate_att;
use ipw_att::data::Dataset;
use ipw_att::propensity::fit_logistic;
use ipw_att::sandwich::{hw_variance, psi, see_variance, see_variance_with, EstimatingContext, JacobianMethod};
use ipw_att::scenario::ScenarioSpec;
use ipw_att::simulate::generate_dataset;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;

fn fitted(name: &str, n: usize, seed: u64) -> Dataset {
    generate_dataset(&ScenarioSpec::preset(name).unwrap(), n, seed).unwrap()
}

/// Weighted least squares of Y on (1, A) with HC0 robust covariance; the
/// slope's variance is the known-weights ATT variance.
fn wls_hc0_slope_variance(a: &[bool], y: &[f64], w: &[f64]) -> (f64, f64) {
    let n = y.len();
    let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 || a[i] { 1.0 } else { 0.0 });
    let wm = DMatrix::from_diagonal(&DVector::from_column_slice(w));
    let xtwx = x.transpose() * &wm * &x;
    let beta = xtwx
        .clone()
        .lu()
        .solve(&(x.transpose() * &wm * DVector::from_column_slice(y)))
        .unwrap();
    let resid = DVector::from_column_slice(y) - &x * &beta;
    let mut meat = DMatrix::zeros(2, 2);
    for i in 0..n {
        let xi = x.row(i).transpose();
        meat += (w[i] * resid[i]).powi(2) * &xi * xi.transpose();
    }
    let bread = xtwx.try_inverse().unwrap();
    let v = &bread * meat * &bread;
    (beta[1], v[(1, 1)])
}

#[test]
fn huber_white_matches_weighted_regression() {
    for (k, name) in ["i", "ii", "iii", "iv"].into_iter().enumerate() {
        let data = fitted(name, 800, 100 + k as u64);
        let fit = fit_logistic(&data).unwrap();
        let est = estimate_att(&data, &fit.weights, 0).unwrap();
        let hw = hw_variance(&data, &fit.weights, &est, 0).unwrap();
        let (slope, var) = wls_hc0_slope_variance(data.treatment(), &data.outcome(0).unwrap(), &fit.weights);
        assert!((slope - est.att).abs() <= 1e-10, "{name}");
        assert!(
            (hw.se * hw.se - var).abs() <= 1e-10 * var,
            "{name}: {} vs {var}",
            hw.se * hw.se
        );
    }
}

#[test]
fn estimating_equations_vanish_at_the_estimate() {
    for name in ["i", "iv"] {
        let data = fitted(name, 1000, 8);
        let fit = fit_logistic(&data).unwrap();
        let est = estimate_att(&data, &fit.weights, 0).unwrap();
        let ctx = EstimatingContext::from_fit(&fit, &est, data.n());
        let total = data
            .units(0)
            .map(|u| psi(&u, &ctx.xi).unwrap())
            .fold(DVector::zeros(ctx.xi.len()), |acc, p| acc + p);
        assert!(total.amax() <= 1e-8, "{name}: {total}");
    }
}

#[test]
fn numeric_and_analytic_jacobians_give_the_same_variance() {
    for name in ["ii", "iii"] {
        let data = fitted(name, 1000, 21);
        let fit = fit_logistic(&data).unwrap();
        let est = estimate_att(&data, &fit.weights, 0).unwrap();
        let a = see_variance_with(&data, &fit, &est, 0, JacobianMethod::Analytic).unwrap();
        let b = see_variance_with(&data, &fit, &est, 0, JacobianMethod::FiniteDifference).unwrap();
        assert!((a.sigma_see - b.sigma_see).abs() <= 1e-6 * a.sigma_see, "{name}");
    }
}

#[test]
fn outcome_fixed_by_treatment_has_zero_variance() {
    let base = fitted("iv", 300, 2);
    let y = DMatrix::from_fn(base.n(), 1, |i, _| if base.treatment()[i] { 3.0 } else { -1.0 });
    let data = Dataset::new(base.covariates().clone(), base.treatment().to_vec(), y).unwrap();
    let fit = fit_logistic(&data).unwrap();
    let est = estimate_att(&data, &fit.weights, 0).unwrap();
    let b = see_variance(&data, &fit, &est, 0).unwrap();
    assert_eq!(est.att, 4.0);
    assert!(b.sigma_see.abs() <= 1e-20);
    assert!(b.sigma_hw.abs() <= 1e-20);
}

#[test]
fn bread_is_block_triangular_with_scaled_identity_for_binary_covariate() {
    let data = fitted("i", 1000, 13);
    let fit = fit_logistic(&data).unwrap();
    let est = estimate_att(&data, &fit.weights, 0).unwrap();
    let b = see_variance(&data, &fit, &est, 0).unwrap();
    let p1 = data.n_treated() as f64 / data.n() as f64;
    // propensity rows do not involve the means
    assert!(b.bread.view((0, 2), (2, 2)).amax() == 0.0);
    // the treated mean does not involve α
    assert!(b.bread.view((2, 0), (1, 2)).amax() == 0.0);
    // with a saturated logistic model the control weights sum to n₁
    assert!((b.bread[(2, 2)] - p1).abs() <= 1e-12);
    assert!((b.bread[(3, 3)] - p1).abs() <= 1e-10);
    assert_eq!(b.bread[(2, 3)], 0.0);
    assert_eq!(b.bread[(3, 2)], 0.0);
}

fn check_matrices(name: &str, n: usize, seed: u64) -> Result<(), TestCaseError> {
    let data = fitted(name, n, seed);
    let fit = fit_logistic(&data).unwrap();
    let est = estimate_att(&data, &fit.weights, 0).unwrap();
    let b = see_variance(&data, &fit, &est, 0).unwrap();
    let asym = (&b.vcov - b.vcov.transpose()).amax();
    prop_assert!(asym <= 1e-10 * b.vcov.norm());
    let eig = SymmetricEigen::new(b.meat.clone()).eigenvalues.min();
    prop_assert!(eig >= -1e-10 * b.meat.trace());
    prop_assert!(b.sigma_see >= 0.0 && b.sigma_hw >= 0.0);
    let identity = b.sigma_see - b.sigma_hw - b.decomposition_constant();
    prop_assert!(identity.abs() <= 1e-8 * b.sigma_see.max(b.sigma_hw));
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sandwich_invariants(seed in any::<u64>(), n in 100usize..1500, name in prop::sample::select(vec!["i", "ii", "iii", "iv"])) {
        check_matrices(name, n, seed)?;
    }
}
