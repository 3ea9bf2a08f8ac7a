//! Logistic propensity model fitted by maximum likelihood, and the ATT
//! weights derived from it.
//!
//! Treated units receive weight 1 and control units receive the fitted odds
//! of treatment `h(L; α) = exp(α₀ + α₁ᵀL)`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, expit, lu_solve_vec, reciprocal_condition, softplus, sup_norm};

/// Linear predictors above this are rejected when exponentiated.
pub const MAX_LINEAR_PREDICTOR: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Bound on the sup-norm of the per-unit mean score.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub max_step_halvings: usize,
    /// `|α₀ + α₁ᵀL|` beyond this without convergence is reported as separation.
    pub separation_bound: f64,
    /// Newton systems with a smaller reciprocal condition are rank deficient.
    pub min_rcond: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 25,
            max_step_halvings: 20,
            separation_bound: 30.0,
            min_rcond: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropensityFit {
    /// `(α₀, α₁ᵀ)`, intercept first.
    pub alpha: Vec<f64>,
    pub propensities: Vec<f64>,
    pub odds: Vec<f64>,
    pub weights: Vec<f64>,
    pub iterations: usize,
    /// Sup-norm of the mean score at the returned coefficients.
    pub score_norm: f64,
    pub log_likelihood: f64,
}

impl PropensityFit {
    pub fn alpha_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.alpha)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightDiagnostic {
    /// `Σ Wᵢ / n`.
    pub mean_weight: f64,
    /// `2 · Σ Aᵢ / n`, the large-sample expectation of the mean weight.
    pub expected_mean: f64,
}

struct Evaluation {
    eta: DVector<f64>,
    probs: DVector<f64>,
    score: DVector<f64>,
    log_likelihood: f64,
}

fn evaluate(x: &DMatrix<f64>, a: &DVector<f64>, alpha: &DVector<f64>) -> Evaluation {
    let eta = x * alpha;
    let probs = eta.map(expit);
    let score = x.transpose() * (a - &probs);
    let log_likelihood = compensated_sum(eta.iter().zip(a.iter()).map(|(&eta, &a)| a * eta - softplus(eta)));
    Evaluation {
        eta,
        probs,
        score,
        log_likelihood,
    }
}

/// Fits `logit P(A = 1 | L) = α₀ + α₁ᵀL` with the default [`FitOptions`].
pub fn fit_logistic(data: &Dataset) -> Result<PropensityFit> {
    fit_logistic_with(data, &FitOptions::default())
}

/// Newton-Raphson from `α = 0` with step halving on log-likelihood decrease.
pub fn fit_logistic_with(data: &Dataset, options: &FitOptions) -> Result<PropensityFit> {
    let x = data.design();
    let n = data.n() as f64;
    let p = x.ncols();
    let a = DVector::from_iterator(data.n(), data.treatment().iter().map(|&t| if t { 1.0 } else { 0.0 }));

    let gram_rcond = reciprocal_condition(&(x.transpose() * &x));
    if gram_rcond < options.min_rcond {
        return Err(Error::RankDeficient { rcond: gram_rcond });
    }

    let mut alpha = DVector::zeros(p);
    let mut current = evaluate(&x, &a, &alpha);
    let mut iterations = 0;

    loop {
        let score_norm = sup_norm(current.score.iter()) / n;
        if score_norm <= options.tolerance {
            return finish(data, alpha, &current, iterations, score_norm);
        }
        let max_eta = sup_norm(current.eta.iter());
        if max_eta > options.separation_bound {
            return Err(Error::Separation {
                max_linear_predictor: max_eta,
            });
        }
        if iterations == options.max_iterations {
            return Err(Error::NonConvergence { iterations, score_norm });
        }

        // Information matrix Xᵀ diag(e(1 - e)) X.
        let mut info = DMatrix::zeros(p, p);
        for (i, &e) in current.probs.iter().enumerate() {
            let w = e * (1.0 - e);
            let row = x.row(i);
            for r in 0..p {
                let xr = w * row[r];
                for c in 0..p {
                    info[(r, c)] += xr * row[c];
                }
            }
        }
        let rcond = reciprocal_condition(&info);
        if rcond < options.min_rcond {
            return Err(Error::RankDeficient { rcond });
        }
        let step = lu_solve_vec(&info, &current.score).ok_or(Error::RankDeficient { rcond })?;

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=options.max_step_halvings {
            let candidate = &alpha + &step * scale;
            let trial = evaluate(&x, &a, &candidate);
            if trial.log_likelihood >= current.log_likelihood - 1e-12 * current.log_likelihood.abs() {
                accepted = Some((candidate, trial));
                break;
            }
            scale *= 0.5;
        }
        let Some((next_alpha, next)) = accepted else {
            return Err(Error::NonConvergence { iterations, score_norm });
        };
        alpha = next_alpha;
        current = next;
        iterations += 1;
    }
}

fn finish(
    data: &Dataset,
    alpha: DVector<f64>,
    eval: &Evaluation,
    iterations: usize,
    score_norm: f64,
) -> Result<PropensityFit> {
    let alpha: Vec<f64> = alpha.iter().copied().collect();
    let odds = odds(&alpha, data)?;
    let propensities = odds.iter().map(|&h| h / (1.0 + h)).collect();
    let weights = data
        .treatment()
        .iter()
        .zip(&odds)
        .map(|(&t, &h)| if t { 1.0 } else { h })
        .collect();
    Ok(PropensityFit {
        alpha,
        propensities,
        odds,
        weights,
        iterations,
        score_norm,
        log_likelihood: eval.log_likelihood,
    })
}

fn linear_predictor(alpha: &[f64], covariates: impl Iterator<Item = f64>) -> f64 {
    alpha[0] + alpha[1..].iter().zip(covariates).map(|(a, l)| a * l).sum::<f64>()
}

fn odds(alpha: &[f64], data: &Dataset) -> Result<Vec<f64>> {
    if alpha.len() != data.n_covariates() + 1 {
        return Err(Error::InvalidData(format!(
            "alpha has length {}, expected {}",
            alpha.len(),
            data.n_covariates() + 1
        )));
    }
    if alpha.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("alpha must be finite".into()));
    }
    let l = data.covariates();
    (0..data.n())
        .map(|i| {
            let eta = linear_predictor(alpha, l.row(i).iter().copied());
            if eta > MAX_LINEAR_PREDICTOR {
                Err(Error::WeightOverflow {
                    index: i,
                    linear_predictor: eta,
                })
            } else {
                Ok(eta.exp())
            }
        })
        .collect()
}

/// ATT weights `Wᵢ = Aᵢ + (1 − Aᵢ) exp(α₀ + α₁ᵀLᵢ)` for a given `α`.
pub fn compute_weights(alpha: &[f64], data: &Dataset) -> Result<Vec<f64>> {
    let odds = odds(alpha, data)?;
    Ok(data
        .treatment()
        .iter()
        .zip(odds)
        .map(|(&t, h)| if t { 1.0 } else { h })
        .collect())
}

pub fn weight_diagnostic(weights: &[f64], treatment: &[bool]) -> Result<WeightDiagnostic> {
    if weights.len() != treatment.len() {
        return Err(Error::InvalidData(format!(
            "{} weights for {} units",
            weights.len(),
            treatment.len()
        )));
    }
    if weights.is_empty() {
        return Err(Error::InvalidData("no units".into()));
    }
    let n = weights.len() as f64;
    let treated = treatment.iter().filter(|&&t| t).count() as f64;
    Ok(WeightDiagnostic {
        mean_weight: compensated_sum(weights.iter().copied()) / n,
        expected_mean: 2.0 * treated / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        Dataset::from_columns(&[0.0, 0.0, 1.0, 1.0], &[false, true, false, true], &[0.0; 4]).unwrap()
    }

    #[test]
    fn balanced_strata_give_zero_logit() {
        let fit = fit_logistic(&toy()).unwrap();
        assert!(fit.alpha.iter().all(|a| a.abs() < 1e-12));
        assert!(fit.propensities.iter().all(|&e| (e - 0.5).abs() < 1e-12));
        assert!(fit.weights.iter().all(|&w| (w - 1.0).abs() < 1e-12));
        assert_eq!(fit.iterations, 0);
    }

    #[test]
    fn weights_from_known_alpha() {
        let d = Dataset::from_columns(&[3.0, -2.0, 0.0], &[true, false, false], &[0.0; 3]).unwrap();
        let w = compute_weights(&[0.0, 0.0], &d).unwrap();
        assert_eq!(w, vec![1.0, 1.0, 1.0]);
        let w = compute_weights(&[-1.0, -2.0], &d).unwrap();
        assert_eq!(w[0], 1.0);
        assert!((w[2] - (-1f64).exp()).abs() < 1e-15);
        assert!((w[2] - 0.3679).abs() < 1e-4);
        assert!((w[1] - 3f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn weight_overflow_is_reported() {
        let d = Dataset::from_columns(&[0.0, 1.0, 800.0], &[true, false, false], &[0.0; 3]).unwrap();
        let err = compute_weights(&[0.0, 1.0], &d).unwrap_err();
        assert!(matches!(err, Error::WeightOverflow { index: 2, .. }));
        assert!(compute_weights(&[0.0], &d).is_err());
    }

    #[test]
    fn diagnostic_arithmetic() {
        let d = weight_diagnostic(&[1.0, 1.0, 1.0, 1.0], &[true, true, false, false]).unwrap();
        assert_eq!(d.mean_weight, 1.0);
        assert_eq!(d.expected_mean, 1.0);
        let d = weight_diagnostic(&[1.0, 0.5, 0.3], &[true, false, false]).unwrap();
        assert!((d.mean_weight - 0.6).abs() < 1e-15);
        assert!((d.expected_mean - 2.0 / 3.0).abs() < 1e-15);
        assert!(weight_diagnostic(&[1.0], &[true, false]).is_err());
    }

    #[test]
    fn collinear_design_is_rank_deficient() {
        let l = DMatrix::from_row_slice(5, 2, &[0.0, 0.0, 1.0, 2.0, 2.0, 4.0, 3.0, 6.0, 4.0, 8.0]);
        let d = Dataset::new(l, vec![true, false, true, false, false], DMatrix::zeros(5, 1)).unwrap();
        assert!(matches!(fit_logistic(&d), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn perfectly_separated_data_is_flagged() {
        let l: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let a: Vec<bool> = (0..20).map(|i| i >= 10).collect();
        let d = Dataset::from_columns(&l, &a, &[0.0; 20]).unwrap();
        assert!(matches!(fit_logistic(&d), Err(Error::Separation { .. })));
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let l: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin()).collect();
        let a: Vec<bool> = (0..30).map(|i| i % 3 == 0).collect();
        let d = Dataset::from_columns(&l, &a, &[0.0; 30]).unwrap();
        let opts = FitOptions {
            max_iterations: 1,
            ..FitOptions::default()
        };
        assert!(matches!(
            fit_logistic_with(&d, &opts),
            Err(Error::NonConvergence { iterations: 1, .. })
        ));
        assert!(fit_logistic(&d).is_ok());
    }
}
