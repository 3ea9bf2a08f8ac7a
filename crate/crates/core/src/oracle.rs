//! Population (large-sample) quantities for a [`ScenarioSpec`]: the ATT,
//! `p₁ = P(A = 1)`, the asymptotic variance with estimated weights `Σ`, the
//! variance with known weights `Σ*`, and the gap `p₁⁻²(c₁₁ + c₂₂ − 2c₁₂)`.
//!
//! Every expectation over `L` goes through one [`DiscreteMeasure`]: the
//! exact two-point measure for Bernoulli covariates, a Gauss-Hermite rule
//! for Normal ones.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::{expit, reciprocal_condition};
use crate::quadrature::DiscreteMeasure;
use crate::scenario::{CovariateDistribution, ScenarioSpec};

pub const DEFAULT_NODES: usize = 80;

/// Largest relative change tolerated when the Hermite node count doubles.
pub const NODE_DOUBLING_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PopulationMoments {
    pub p1: f64,
    pub mu1: f64,
    pub mu0: f64,
    pub att: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AsymptoticResult {
    pub att: f64,
    pub p1: f64,
    pub mu1: f64,
    pub mu0: f64,
    /// `Σ`, weights estimated.
    pub sigma: f64,
    /// `Σ*`, weights known.
    pub sigma_star: f64,
    /// `p₁⁻²(c₁₁ + c₂₂ − 2c₁₂)`.
    pub constant: f64,
    /// `(Σ / Σ*)^½`.
    pub sd_ratio: f64,
    /// Raw `c` matrix, row-major.
    pub c: [[f64; 2]; 2],
}

/// Discrete measure for `L` with `nodes` Hermite points when `L` is Normal.
pub fn covariate_measure(spec: &ScenarioSpec, nodes: usize) -> Result<DiscreteMeasure> {
    spec.validate()?;
    match spec.covariate {
        CovariateDistribution::Bernoulli { p } => Ok(DiscreteMeasure::bernoulli(p)),
        CovariateDistribution::Normal { mean } => DiscreteMeasure::standard_normal_shifted(mean, nodes),
    }
}

pub fn population_moments(spec: &ScenarioSpec) -> Result<PopulationMoments> {
    let measure = covariate_measure(spec, DEFAULT_NODES)?;
    let moments = moments_under(spec, &measure)?;
    if let CovariateDistribution::Normal { .. } = spec.covariate {
        let fine = moments_under(spec, &covariate_measure(spec, 2 * DEFAULT_NODES)?)?;
        let change = [(moments.p1, fine.p1), (moments.mu1, fine.mu1), (moments.mu0, fine.mu0)]
            .iter()
            .map(|&(a, b)| relative_change(a, b))
            .fold(0.0, f64::max);
        if change > NODE_DOUBLING_TOLERANCE {
            return Err(Error::QuadratureFailure(format!(
                "population moments moved by {change:.2e} when doubling nodes"
            )));
        }
    }
    Ok(moments)
}

/// `p₁ = E[e(L)]`, `μₐ = E[E(Yᵃ|L) e(L)] / p₁`.
///
/// The ATT is evaluated as `β_a + β_aL E[L e(L)] / p₁`, so it equals `β_a`
/// exactly when there is no interaction.
pub fn moments_under(spec: &ScenarioSpec, measure: &DiscreteMeasure) -> Result<PopulationMoments> {
    let e = |l: f64| expit(spec.linear_predictor(l));
    let p1 = measure.expect(e);
    if !(p1 > 0.0 && p1 < 1.0) {
        return Err(Error::QuadratureFailure(format!("P(A = 1) evaluated to {p1}")));
    }
    let mu1 = measure.expect(|l| spec.outcome.mean(1.0, l) * e(l)) / p1;
    let mu0 = measure.expect(|l| spec.outcome.mean(0.0, l) * e(l)) / p1;
    let att = spec.outcome.treatment + spec.outcome.interaction * (measure.expect(|l| l * e(l)) / p1);
    Ok(PopulationMoments { p1, mu1, mu0, att })
}

pub fn asymptotic_variance(spec: &ScenarioSpec) -> Result<AsymptoticResult> {
    asymptotic_variance_with_nodes(spec, DEFAULT_NODES)
}

/// Like [`asymptotic_variance`] with an explicit Hermite node count; a
/// Normal covariate also requires stability under doubling the node count.
pub fn asymptotic_variance_with_nodes(spec: &ScenarioSpec, nodes: usize) -> Result<AsymptoticResult> {
    let result = variance_under(spec, &covariate_measure(spec, nodes)?)?;
    if let CovariateDistribution::Normal { .. } = spec.covariate {
        let fine = variance_under(spec, &covariate_measure(spec, 2 * nodes)?)?;
        let change = relative_change(result.sigma, fine.sigma).max(relative_change(result.sigma_star, fine.sigma_star));
        if change > NODE_DOUBLING_TOLERANCE {
            return Err(Error::QuadratureFailure(format!(
                "asymptotic variance moved by {change:.2e} when doubling nodes from {nodes}"
            )));
        }
    }
    Ok(result)
}

/// Largest relative change in `Σ` or `Σ*` between `nodes` and `2 · nodes`
/// Hermite points (0 for Bernoulli covariates).
pub fn node_doubling_change(spec: &ScenarioSpec, nodes: usize) -> Result<f64> {
    let coarse = variance_under(spec, &covariate_measure(spec, nodes)?)?;
    let fine = variance_under(spec, &covariate_measure(spec, 2 * nodes)?)?;
    Ok(relative_change(coarse.sigma, fine.sigma).max(relative_change(coarse.sigma_star, fine.sigma_star)))
}

fn relative_change(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// The closed-form decomposition under a given covariate measure.
pub fn variance_under(spec: &ScenarioSpec, measure: &DiscreteMeasure) -> Result<AsymptoticResult> {
    let PopulationMoments { p1, mu1, mu0, att } = moments_under(spec, measure)?;
    let e = |l: f64| expit(spec.linear_predictor(l));
    let h = |l: f64| spec.linear_predictor(l).exp();
    let r1 = |l: f64| spec.outcome.mean(1.0, l) - mu1;
    let r0 = |l: f64| spec.outcome.mean(0.0, l) - mu0;
    let var_y = spec.outcome_sd * spec.outcome_sd;

    // a₁₁ = E[e(1−e) X Xᵀ], X = (1, L)
    let curvature = |l: f64| e(l) * (1.0 - e(l));
    let a11 = Matrix2::new(
        measure.expect(curvature),
        measure.expect(|l| curvature(l) * l),
        measure.expect(|l| curvature(l) * l),
        measure.expect(|l| curvature(l) * l * l),
    );
    let rcond = reciprocal_condition(&DMatrix::from_column_slice(2, 2, a11.as_slice()));
    if rcond < 1e-12 {
        return Err(Error::SingularA11 { rcond });
    }
    let a11_inv = a11.try_inverse().ok_or(Error::SingularA11 { rcond })?;

    let moment = |f: &dyn Fn(f64) -> f64| Vector2::new(measure.expect(f), measure.expect(|l| f(l) * l));
    let m1x = moment(&|l| r1(l) * curvature(l));
    let m0x = moment(&|l| r0(l) * curvature(l));
    let m0hx = moment(&|l| r0(l) * e(l) * e(l));

    // rows of (a₂₁ − b₂₁) and b₂₁
    let diff = [-m1x, -m0x];
    let b21 = [m1x, -m0hx];
    let c = Matrix2::from_fn(|r, k| diff[r].dot(&(a11_inv * diff[k])) - b21[r].dot(&(a11_inv * b21[k])));
    let constant = (c[(0, 0)] + c[(1, 1)] - c[(0, 1)] - c[(1, 0)]) / (p1 * p1);

    let treated_term = measure.expect(|l| e(l) * (var_y + r1(l) * r1(l)));
    let control_term = measure.expect(|l| h(l) * e(l) * (var_y + r0(l) * r0(l)));
    let sigma_star = (treated_term + control_term) / (p1 * p1);
    let sigma = sigma_star + constant;
    if !(sigma.is_finite() && sigma_star.is_finite()) {
        return Err(Error::QuadratureFailure("non-finite variance".into()));
    }
    Ok(AsymptoticResult {
        att,
        p1,
        mu1,
        mu0,
        sigma,
        sigma_star,
        constant,
        sd_ratio: (sigma / sigma_star).sqrt(),
        c: [[c[(0, 0)], c[(0, 1)]], [c[(1, 0)], c[(1, 1)]]],
    })
}

/// Fully assembled population bread `A = E[−ψ̇]` and meat `B = E[ψψᵀ]`
/// (4×4, ordering `α₀, α₁, μ₁, μ₀`) from conditional expectations given `L`.
pub fn population_blocks(spec: &ScenarioSpec, measure: &DiscreteMeasure) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let PopulationMoments { mu1, mu0, .. } = moments_under(spec, measure)?;
    let var_y = spec.outcome_sd * spec.outcome_sd;
    let mut a = DMatrix::zeros(4, 4);
    let mut b = DMatrix::zeros(4, 4);
    for (&l, &prob) in measure.points.iter().zip(&measure.probabilities) {
        let eta = spec.linear_predictor(l);
        let e = expit(eta);
        let h = eta.exp();
        let r1 = spec.outcome.mean(1.0, l) - mu1;
        let r0 = spec.outcome.mean(0.0, l) - mu0;
        let x = [1.0, l];
        let mut a_l = DMatrix::zeros(4, 4);
        let mut b_l = DMatrix::zeros(4, 4);
        for r in 0..2 {
            for c in 0..2 {
                a_l[(r, c)] = e * (1.0 - e) * x[r] * x[c];
                b_l[(r, c)] = e * (1.0 - e) * x[r] * x[c];
            }
            // E[ψ₁ψ_α | L] = E[A(Y−μ₁)(A−e) | L] X
            b_l[(2, r)] = e * (1.0 - e) * r1 * x[r];
            b_l[(r, 2)] = b_l[(2, r)];
            // E[ψ₀ψ_α | L] = E[h(1−A)(Y−μ₀)(A−e) | L] X
            b_l[(3, r)] = -h * (1.0 - e) * e * r0 * x[r];
            b_l[(r, 3)] = b_l[(3, r)];
            // −∂ψ₀/∂α = −(1−A)(Y−μ₀) h X
            a_l[(3, r)] = -(1.0 - e) * r0 * h * x[r];
        }
        a_l[(2, 2)] = e;
        a_l[(3, 3)] = h * (1.0 - e);
        b_l[(2, 2)] = e * (var_y + r1 * r1);
        b_l[(3, 3)] = h * h * (1.0 - e) * (var_y + r0 * r0);
        a += a_l * prob;
        b += b_l * prob;
    }
    Ok((a, b))
}

/// `Σ = ∇gᵀ A⁻¹ B A⁻ᵀ ∇g` from the assembled population blocks.
pub fn sigma_from_blocks(spec: &ScenarioSpec, measure: &DiscreteMeasure) -> Result<f64> {
    let (a, b) = population_blocks(spec, measure)?;
    let g = DVector::from_vec(vec![0.0, 0.0, 1.0, -1.0]);
    let u = a
        .transpose()
        .lu()
        .solve(&g)
        .ok_or(Error::SingularBread { rcond: 0.0 })?;
    Ok(u.dot(&(&b * &u)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interaction_free_att_is_exact() {
        for (_, mut spec) in ScenarioSpec::presets() {
            spec.outcome.interaction = 0.0;
            spec.outcome.treatment = 0.37;
            assert_eq!(population_moments(&spec).unwrap().att, 0.37);
        }
    }

    #[test]
    fn decomposition_is_the_construction() {
        for (_, spec) in ScenarioSpec::presets() {
            let r = asymptotic_variance(&spec).unwrap();
            assert!((r.sigma - r.sigma_star - r.constant).abs() <= 1e-10 * r.sigma.abs());
            assert!((r.sd_ratio - (r.sigma / r.sigma_star).sqrt()).abs() <= 1e-12);
            assert!((r.c[0][1] - r.c[1][0]).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_spec_is_rejected() {
        let mut spec = ScenarioSpec::preset("iii").unwrap();
        spec.outcome_sd = -1.0;
        assert!(asymptotic_variance(&spec).is_err());
    }
}
