use ipw_att::data::Dataset;
use ipw_att::propensity::{compute_weights, fit_logistic, weight_diagnostic};
use ipw_att::scenario::ScenarioSpec;
use ipw_att::simulate::generate_dataset;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Plain iteratively reweighted least squares: regress the working response
/// `z = η + (A − p)/(p(1 − p))` on X with weights `p(1 − p)` until α stops
/// moving. Shares nothing with the library's Newton solver.
fn irls(x: &DMatrix<f64>, a: &DVector<f64>) -> DVector<f64> {
    let mut alpha = DVector::zeros(x.ncols());
    for _ in 0..100 {
        let eta = x * &alpha;
        let p = eta.map(|e| 1.0 / (1.0 + (-e).exp()));
        let w = p.map(|p| p * (1.0 - p));
        let z = DVector::from_fn(x.nrows(), |i, _| eta[i] + (a[i] - p[i]) / w[i]);
        let xtw = DMatrix::from_fn(x.ncols(), x.nrows(), |r, c| x[(c, r)] * w[c]);
        let next = (&xtw * x).cholesky().unwrap().solve(&(&xtw * z));
        let done = (&next - &alpha).amax() < 1e-14;
        alpha = next;
        if done {
            break;
        }
    }
    alpha
}

fn design_and_treatment(data: &Dataset) -> (DMatrix<f64>, DVector<f64>) {
    let a = DVector::from_iterator(data.n(), data.treatment().iter().map(|&t| if t { 1.0 } else { 0.0 }));
    (data.design(), a)
}

#[test]
fn matches_irls_on_small_dataset() {
    let data = generate_dataset(&ScenarioSpec::preset("i").unwrap(), 50, 42).unwrap();
    let fit = fit_logistic(&data).unwrap();
    let (x, a) = design_and_treatment(&data);
    let oracle = irls(&x, &a);
    for (got, want) in fit.alpha.iter().zip(oracle.iter()) {
        assert!((got - want).abs() <= 1e-8, "{got} vs {want}");
    }
}

#[test]
fn matches_irls_with_normal_covariate() {
    let data = generate_dataset(&ScenarioSpec::preset("iv").unwrap(), 500, 7).unwrap();
    let fit = fit_logistic(&data).unwrap();
    let (x, a) = design_and_treatment(&data);
    let oracle = irls(&x, &a);
    assert!((fit.alpha_vector() - oracle).amax() <= 1e-8);
}

#[test]
fn large_sample_recovers_generating_coefficients() {
    let data = generate_dataset(&ScenarioSpec::preset("i").unwrap(), 100_000, 2021).unwrap();
    let fit = fit_logistic(&data).unwrap();
    assert!((fit.alpha[0] + 1.0).abs() < 0.05, "{:?}", fit.alpha);
    assert!((fit.alpha[1] + 2.0).abs() < 0.05, "{:?}", fit.alpha);
}

#[test]
fn score_vanishes_and_propensities_average_to_treated_fraction() {
    for (name, spec) in ScenarioSpec::presets() {
        let data = generate_dataset(&spec, 2000, 11).unwrap();
        let fit = fit_logistic(&data).unwrap();
        let (x, a) = design_and_treatment(&data);
        let resid = &a - DVector::from_column_slice(&fit.propensities);
        let score = x.transpose() * resid;
        let n = data.n() as f64;
        assert!(score.amax() <= 1e-8 * n, "{name}: {score}");
        let mean_e = fit.propensities.iter().sum::<f64>() / n;
        let p1 = data.n_treated() as f64 / n;
        assert!((mean_e - p1).abs() <= 1e-8, "{name}");
    }
}

#[test]
fn fitted_objects_are_internally_consistent() {
    let data = generate_dataset(&ScenarioSpec::preset("iii").unwrap(), 1000, 5).unwrap();
    let fit = fit_logistic(&data).unwrap();
    for i in 0..data.n() {
        assert!((fit.propensities[i] - fit.odds[i] / (1.0 + fit.odds[i])).abs() <= 1e-15);
        if data.treatment()[i] {
            assert_eq!(fit.weights[i], 1.0);
        } else {
            assert_eq!(fit.weights[i], fit.odds[i]);
            assert!(fit.weights[i] > 0.0);
        }
    }
    assert!(fit.score_norm <= 1e-10);
    assert_eq!(compute_weights(&fit.alpha, &data).unwrap(), fit.weights);
}

#[test]
fn mean_weight_tracks_twice_the_treated_share() {
    // scenario (i): p₁ = 0.158, so E[W] = 0.316
    let data = generate_dataset(&ScenarioSpec::preset("i").unwrap(), 1000, 3).unwrap();
    let fit = fit_logistic(&data).unwrap();
    let n = data.n() as f64;
    let mean = fit.weights.iter().sum::<f64>() / n;
    let sd = (fit.weights.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(
        (mean - 2.0 * 0.15818364727378095).abs() <= 3.0 * sd / n.sqrt(),
        "{mean}"
    );

    let data = generate_dataset(&ScenarioSpec::preset("ii").unwrap(), 100_000, 3).unwrap();
    let fit = fit_logistic(&data).unwrap();
    let d = weight_diagnostic(&fit.weights, data.treatment()).unwrap();
    assert!((d.mean_weight - 1.48).abs() < 0.02, "{d:?}");
    assert!((d.expected_mean - 1.48).abs() < 0.02, "{d:?}");
}

#[test]
fn true_alpha_gives_unit_weight_to_treated() {
    let data = generate_dataset(&ScenarioSpec::preset("iv").unwrap(), 500, 9).unwrap();
    let w = compute_weights(&[0.0, 1.0], &data).unwrap();
    for (t, w) in data.treatment().iter().zip(&w) {
        if *t {
            assert_eq!(*w, 1.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn shifting_a_covariate_leaves_propensities_unchanged(seed in 0u64..1000, shift in -5.0..5.0f64, scale in 0.2..5.0f64) {
        let data = generate_dataset(&ScenarioSpec::preset("iii").unwrap(), 400, seed).unwrap();
        let fit = fit_logistic(&data).unwrap();
        let moved = Dataset::new(
            data.covariates().map(|l| scale * l + shift),
            data.treatment().to_vec(),
            data.outcomes().clone(),
        ).unwrap();
        let refit = fit_logistic(&moved).unwrap();
        for (a, b) in fit.propensities.iter().zip(&refit.propensities) {
            prop_assert!((a - b).abs() <= 1e-8);
        }
        prop_assert!((refit.alpha[1] * scale - fit.alpha[1]).abs() <= 1e-8);
    }

    #[test]
    fn weights_are_positive_and_finite(seed in 0u64..1000, name in prop::sample::select(vec!["i", "ii", "iii", "iv"])) {
        let data = generate_dataset(&ScenarioSpec::preset(name).unwrap(), 200, seed).unwrap();
        let fit = fit_logistic(&data).unwrap();
        prop_assert!(fit.weights.iter().all(|w| w.is_finite() && *w > 0.0));
    }
}
