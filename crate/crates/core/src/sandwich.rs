//! Sandwich variance estimators for the IPW ATT.
//!
//! The stacked estimating function for one unit is
//!
//! ```text
//! ψ(ξ) = ( {A − e(L; α)} (1, Lᵀ)ᵀ,
//!          W(A, L; α) A (Y − μ₁),
//!          W(A, L; α) (1 − A) (Y − μ₀) )
//! ```
//!
//! with `ξ = (α₀, α₁ᵀ, μ₁, μ₀)ᵀ`. Solving `Σψ = 0` jointly gives the
//! propensity MLE and the two Hajek means, so the sandwich
//! `A⁻¹ B A⁻ᵀ` built from it accounts for the estimated weights. The
//! Huber-White variance keeps only the last two rows with the weights held
//! fixed.
//!
//! Bread and meat are per-unit means, so `Var(ATT̂) ≈ Σ̂ / n`.

use nalgebra::{DMatrix, DVector, Matrix2};
use serde::Serialize;

use crate::att::AttEstimate;
use crate::data::{Dataset, Unit};
use crate::error::{Error, Result};
use crate::numeric::{expit, lu_solve, lu_solve_vec, reciprocal_condition};
use crate::propensity::{PropensityFit, MAX_LINEAR_PREDICTOR};

/// Bread matrices below this reciprocal condition are treated as singular.
pub const MIN_BREAD_RCOND: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JacobianMethod {
    #[default]
    Analytic,
    /// Central differences with step `1e-6 · max(1, |ξⱼ|)`.
    FiniteDifference,
}

/// Stacked parameter vector and the contrast picking out `μ₁ − μ₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatingContext {
    pub xi: DVector<f64>,
    pub n: usize,
    pub gradient_g: DVector<f64>,
}

impl EstimatingContext {
    pub fn new(alpha: &[f64], mu1: f64, mu0: f64, n: usize) -> Self {
        let p = alpha.len();
        let mut xi = DVector::zeros(p + 2);
        xi.rows_mut(0, p).copy_from_slice(alpha);
        xi[p] = mu1;
        xi[p + 1] = mu0;
        Self {
            xi,
            n,
            gradient_g: att_gradient(p - 1),
        }
    }

    pub fn from_fit(fit: &PropensityFit, est: &AttEstimate, n: usize) -> Self {
        Self::new(&fit.alpha, est.mu1_hat, est.mu0_hat, n)
    }

    /// Number of covariates `J`.
    pub fn n_covariates(&self) -> usize {
        self.xi.len() - 3
    }
}

/// `∇g = (0, 0_J, 1, −1)`.
pub fn att_gradient(n_covariates: usize) -> DVector<f64> {
    let mut g = DVector::zeros(n_covariates + 3);
    g[n_covariates + 1] = 1.0;
    g[n_covariates + 2] = -1.0;
    g
}

struct UnitTerms {
    x: DVector<f64>,
    a: f64,
    e: f64,
    h: f64,
    weight: f64,
}

fn unit_terms(unit: &Unit, xi: &DVector<f64>) -> Result<UnitTerms> {
    let p = unit.covariates.len() + 1;
    if xi.len() != p + 2 {
        return Err(Error::InvalidData(format!(
            "xi has length {}, expected {} for {} covariates",
            xi.len(),
            p + 2,
            p - 1
        )));
    }
    if xi.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("xi must be finite".into()));
    }
    let x = unit.design_row();
    let eta = xi.rows(0, p).dot(&x);
    if eta > MAX_LINEAR_PREDICTOR {
        return Err(Error::WeightOverflow {
            index: 0,
            linear_predictor: eta,
        });
    }
    let h = eta.exp();
    let a = unit.a();
    Ok(UnitTerms {
        x,
        a,
        e: expit(eta),
        h,
        weight: if unit.treated { 1.0 } else { h },
    })
}

/// Stacked estimating function for one unit, length `J + 3`.
pub fn psi(unit: &Unit, xi: &DVector<f64>) -> Result<DVector<f64>> {
    let t = unit_terms(unit, xi)?;
    let p = t.x.len();
    let mut out = DVector::zeros(p + 2);
    out.rows_mut(0, p).copy_from(&(&t.x * (t.a - t.e)));
    out[p] = t.weight * t.a * (unit.outcome - xi[p]);
    out[p + 1] = t.weight * (1.0 - t.a) * (unit.outcome - xi[p + 1]);
    Ok(out)
}

/// Analytic `∂ψ/∂ξᵀ` for one unit.
pub fn psi_jacobian(unit: &Unit, xi: &DVector<f64>) -> Result<DMatrix<f64>> {
    let t = unit_terms(unit, xi)?;
    let p = t.x.len();
    let mut jac = DMatrix::zeros(p + 2, p + 2);
    let curvature = t.e * (1.0 - t.e);
    for r in 0..p {
        for c in 0..p {
            jac[(r, c)] = -curvature * t.x[r] * t.x[c];
        }
    }
    // Treated weights are identically 1, so ψ₁ does not depend on α.
    jac[(p, p)] = -t.weight * t.a;
    let control_residual = (1.0 - t.a) * (unit.outcome - xi[p + 1]) * t.h;
    for c in 0..p {
        jac[(p + 1, c)] = control_residual * t.x[c];
    }
    jac[(p + 1, p + 1)] = -t.weight * (1.0 - t.a);
    Ok(jac)
}

/// Central finite-difference `∂ψ/∂ξᵀ`.
pub fn psi_jacobian_numeric(unit: &Unit, xi: &DVector<f64>) -> Result<DMatrix<f64>> {
    let dim = xi.len();
    let mut jac = DMatrix::zeros(dim, dim);
    let mut plus = xi.clone();
    let mut minus = xi.clone();
    for j in 0..dim {
        let step = 1e-6 * xi[j].abs().max(1.0);
        plus[j] = xi[j] + step;
        minus[j] = xi[j] - step;
        let diff = (psi(unit, &plus)? - psi(unit, &minus)?) / (plus[j] - minus[j]);
        jac.set_column(j, &diff);
        plus[j] = xi[j];
        minus[j] = xi[j];
    }
    Ok(jac)
}

/// Bread `(1/n) Σ −ψ̇ᵢ` and meat `(1/n) Σ ψᵢψᵢᵀ` of an M-estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct Sandwich {
    pub bread: DMatrix<f64>,
    pub meat: DMatrix<f64>,
}

impl Sandwich {
    /// Accumulates per-unit `(ψᵢ, ψ̇ᵢ)` pairs in iteration order.
    pub fn from_terms<I>(dim: usize, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = Result<(DVector<f64>, DMatrix<f64>)>>,
    {
        let mut bread = DMatrix::zeros(dim, dim);
        let mut meat = DMatrix::zeros(dim, dim);
        let mut n = 0usize;
        for term in terms {
            let (psi, jac) = term?;
            bread -= &jac;
            meat.ger(1.0, &psi, &psi, 1.0);
            n += 1;
        }
        if n == 0 {
            return Err(Error::InvalidData("no units".into()));
        }
        bread /= n as f64;
        meat /= n as f64;
        Ok(Self { bread, meat })
    }

    fn check_bread(&self) -> Result<()> {
        let rcond = reciprocal_condition(&self.bread);
        // written so that NaN fails too
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(rcond >= MIN_BREAD_RCOND) {
            return Err(Error::SingularBread { rcond });
        }
        Ok(())
    }

    /// `A⁻¹ B A⁻ᵀ`, symmetrized.
    pub fn vcov(&self) -> Result<DMatrix<f64>> {
        self.check_bread()?;
        let singular = || Error::SingularBread { rcond: 0.0 };
        let left = lu_solve(&self.bread, &self.meat).ok_or_else(singular)?;
        let v = lu_solve(&self.bread, &left.transpose()).ok_or_else(singular)?;
        Ok((&v + v.transpose()) * 0.5)
    }

    /// `gᵀ A⁻¹ B A⁻ᵀ g`, via a single solve `Aᵀu = g`.
    pub fn contrast_variance(&self, g: &DVector<f64>) -> Result<f64> {
        self.check_bread()?;
        let u = lu_solve_vec(&self.bread.transpose(), g).ok_or(Error::SingularBread { rcond: 0.0 })?;
        Ok(u.dot(&(&self.meat * &u)))
    }
}

/// Everything produced by the stacked-estimating-equation variance.
#[derive(Debug, Clone, PartialEq)]
pub struct SandwichBlocks {
    pub bread: DMatrix<f64>,
    pub meat: DMatrix<f64>,
    pub vcov: DMatrix<f64>,
    /// `Σ̂ = ∇gᵀ V̂ ∇g`.
    pub sigma_see: f64,
    /// `Σ̂*`, the weights-known variance.
    pub sigma_hw: f64,
    /// Decomposition matrix `c`, scaled so that
    /// `Σ̂ = Σ̂* + p̂₁⁻²(c₁₁ + c₂₂ − 2c₁₂)`.
    pub c_terms: Matrix2<f64>,
    /// Fraction treated `n₁ / n`.
    pub p1_hat: f64,
    pub n: usize,
}

impl SandwichBlocks {
    pub fn se_see(&self) -> f64 {
        (self.sigma_see / self.n as f64).sqrt()
    }

    pub fn se_hw(&self) -> f64 {
        (self.sigma_hw / self.n as f64).sqrt()
    }

    /// `p̂₁⁻²(c₁₁ + c₂₂ − 2c₁₂)`.
    pub fn decomposition_constant(&self) -> f64 {
        let c = &self.c_terms;
        (c[(0, 0)] + c[(1, 1)] - c[(0, 1)] - c[(1, 0)]) / (self.p1_hat * self.p1_hat)
    }
}

/// Stacked sandwich for `ψ` evaluated at `ξ̂ = (α̂, μ̂₁, μ̂₀)` for one outcome.
pub fn see_variance(
    data: &Dataset,
    fit: &PropensityFit,
    est: &AttEstimate,
    outcome_index: usize,
) -> Result<SandwichBlocks> {
    see_variance_with(data, fit, est, outcome_index, JacobianMethod::Analytic)
}

pub fn see_variance_with(
    data: &Dataset,
    fit: &PropensityFit,
    est: &AttEstimate,
    outcome_index: usize,
    method: JacobianMethod,
) -> Result<SandwichBlocks> {
    let n = data.n();
    if fit.alpha.len() != data.n_covariates() + 1 {
        return Err(Error::InvalidData("propensity fit does not match the dataset".into()));
    }
    data.outcome(outcome_index)?;
    let ctx = EstimatingContext::from_fit(fit, est, n);
    let dim = ctx.xi.len();
    let sandwich = Sandwich::from_terms(
        dim,
        (0..n).map(|i| {
            let unit = data.unit(i, outcome_index);
            let jac = match method {
                JacobianMethod::Analytic => psi_jacobian(&unit, &ctx.xi),
                JacobianMethod::FiniteDifference => psi_jacobian_numeric(&unit, &ctx.xi),
            };
            psi(&unit, &ctx.xi)
                .and_then(|p| jac.map(|j| (p, j)))
                .map_err(|e| with_index(e, i))
        }),
    )?;
    let vcov = sandwich.vcov()?;
    let sigma_see = sandwich.contrast_variance(&ctx.gradient_g)?;

    let known = KnownWeightMoments::compute(data.treatment(), &data.outcome(outcome_index)?, &fit.weights, est)?;
    let sigma_hw = known.sigma();
    let p1_hat = data.n_treated() as f64 / n as f64;
    let c_terms = decomposition_terms(data, outcome_index, &ctx, &known, p1_hat)?;

    Ok(SandwichBlocks {
        bread: sandwich.bread,
        meat: sandwich.meat,
        vcov,
        sigma_see,
        sigma_hw,
        c_terms,
        p1_hat,
        n,
    })
}

fn with_index(err: Error, index: usize) -> Error {
    match err {
        Error::WeightOverflow { linear_predictor, .. } => Error::WeightOverflow {
            index,
            linear_predictor,
        },
        other => other,
    }
}

/// Per-unit means that define the weights-known sandwich: the two bread
/// entries `d₁ = mean(WA)`, `d₀ = mean(W(1 − A))` and the two meat entries
/// `s₁ = mean(W²A(Y − μ̂₁)²)`, `s₀ = mean(W²(1 − A)(Y − μ̂₀)²)`.
#[derive(Debug, Clone, Copy)]
struct KnownWeightMoments {
    d1: f64,
    d0: f64,
    s1: f64,
    s0: f64,
}

impl KnownWeightMoments {
    fn compute(treatment: &[bool], y: &[f64], weights: &[f64], est: &AttEstimate) -> Result<Self> {
        if treatment.len() != y.len() || weights.len() != y.len() {
            return Err(Error::InvalidData("length mismatch".into()));
        }
        let n = y.len() as f64;
        let (mut d1, mut d0, mut s1, mut s0) = (0.0, 0.0, 0.0, 0.0);
        for ((&t, &y), &w) in treatment.iter().zip(y).zip(weights) {
            if t {
                let r = y - est.mu1_hat;
                d1 += w;
                s1 += w * w * r * r;
            } else {
                let r = y - est.mu0_hat;
                d0 += w;
                s0 += w * w * r * r;
            }
        }
        if d1 == 0.0 {
            return Err(Error::EmptyGroup("treated"));
        }
        if d0 == 0.0 {
            return Err(Error::EmptyGroup("control"));
        }
        Ok(Self {
            d1: d1 / n,
            d0: d0 / n,
            s1: s1 / n,
            s0: s0 / n,
        })
    }

    fn sigma(&self) -> f64 {
        self.s1 / (self.d1 * self.d1) + self.s0 / (self.d0 * self.d0)
    }
}

/// Empirical decomposition matrix built from the block pieces
/// `a₁₁ = mean e(1−e)XXᵀ`, `b₁₁ = mean (A−e)²XXᵀ`,
/// `a₂₁ = (0; −mean (1−A)(Y−μ₀)hX)` and `b₂₁ = (mean m₁X; −mean m₀hX)`
/// where `m₁ = A(Y−μ₁)(1−e)` and `m₀ = (1−A)(Y−μ₀)e`.
///
/// The raw matrix is
/// `c = a₂₁a₁₁⁻¹b₁₁a₁₁⁻¹a₂₁ᵀ − a₂₁a₁₁⁻¹b₂₁ᵀ − b₂₁a₁₁⁻¹a₂₁ᵀ`, which reduces to
/// `(a₂₁ − b₂₁)a₁₁⁻¹(a₂₁ − b₂₁)ᵀ − b₂₁a₁₁⁻¹b₂₁ᵀ` when `a₁₁ = b₁₁`. The
/// lower bread block is `diag(d₁, d₀)` rather than `p̂₁I` unless the
/// propensity model is saturated, so the returned matrix is rescaled to
/// `p̂₁² D⁻¹ c D⁻¹`.
fn decomposition_terms(
    data: &Dataset,
    outcome_index: usize,
    ctx: &EstimatingContext,
    known: &KnownWeightMoments,
    p1_hat: f64,
) -> Result<Matrix2<f64>> {
    let p = ctx.n_covariates() + 1;
    let mu1 = ctx.xi[p];
    let mu0 = ctx.xi[p + 1];
    let mut a11 = DMatrix::zeros(p, p);
    let mut b11 = DMatrix::zeros(p, p);
    let mut a21 = DMatrix::zeros(2, p);
    let mut b21 = DMatrix::zeros(2, p);
    for i in 0..data.n() {
        let unit = data.unit(i, outcome_index);
        let t = unit_terms(&unit, &ctx.xi).map_err(|e| with_index(e, i))?;
        let y = unit.outcome;
        let m1 = t.a * (y - mu1) * (1.0 - t.e);
        let m0 = (1.0 - t.a) * (y - mu0) * t.e;
        let control_h = (1.0 - t.a) * (y - mu0) * t.h;
        let curvature = t.e * (1.0 - t.e);
        let score_sq = (t.a - t.e) * (t.a - t.e);
        for r in 0..p {
            for c in 0..p {
                let xx = t.x[r] * t.x[c];
                a11[(r, c)] += curvature * xx;
                b11[(r, c)] += score_sq * xx;
            }
            a21[(1, r)] -= control_h * t.x[r];
            b21[(0, r)] += m1 * t.x[r];
            b21[(1, r)] -= m0 * t.h * t.x[r];
        }
    }
    let n = data.n() as f64;
    a11 /= n;
    b11 /= n;
    a21 /= n;
    b21 /= n;

    let rcond = reciprocal_condition(&a11);
    if rcond < MIN_BREAD_RCOND {
        return Err(Error::SingularA11 { rcond });
    }
    let singular = || Error::SingularA11 { rcond };
    // a₁₁⁻¹a₂₁ᵀ and a₁₁⁻¹b₂₁ᵀ
    let inv_a21t = lu_solve(&a11, &a21.transpose()).ok_or_else(singular)?;
    let inv_b21t = lu_solve(&a11, &b21.transpose()).ok_or_else(singular)?;
    let raw = inv_a21t.transpose() * &b11 * &inv_a21t - &a21 * &inv_b21t - &b21 * &inv_a21t;

    let scale = [p1_hat / known.d1, p1_hat / known.d0];
    Ok(Matrix2::from_fn(|r, c| raw[(r, c)] * scale[r] * scale[c]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HwVariance {
    pub sigma_hw: f64,
    pub se: f64,
}

/// Huber-White variance with the weights treated as known constants.
///
/// Equals the HC0 robust variance of the slope in a weighted least squares
/// regression of `Y` on `(1, A)`.
pub fn hw_variance(data: &Dataset, weights: &[f64], est: &AttEstimate, outcome_index: usize) -> Result<HwVariance> {
    let y = data.outcome(outcome_index)?;
    hw_variance_from(data.treatment(), &y, weights, est)
}

pub fn hw_variance_from(treatment: &[bool], y: &[f64], weights: &[f64], est: &AttEstimate) -> Result<HwVariance> {
    let sigma_hw = KnownWeightMoments::compute(treatment, y, weights, est)?.sigma();
    Ok(HwVariance {
        sigma_hw,
        se: (sigma_hw / y.len() as f64).sqrt(),
    })
}

/// The two-equation `(ψ₁, ψ₀)` stack with fixed weights, run through the
/// generic [`Sandwich`] machinery. Returns the 2×2 `(μ₁, μ₀)` covariance.
pub fn fixed_weight_stack(
    data: &Dataset,
    weights: &[f64],
    est: &AttEstimate,
    outcome_index: usize,
) -> Result<DMatrix<f64>> {
    let y = data.outcome(outcome_index)?;
    if weights.len() != y.len() {
        return Err(Error::InvalidData("length mismatch".into()));
    }
    let sandwich = Sandwich::from_terms(
        2,
        data.treatment().iter().zip(&y).zip(weights).map(|((&t, &y), &w)| {
            let a = if t { 1.0 } else { 0.0 };
            let psi = DVector::from_vec(vec![w * a * (y - est.mu1_hat), w * (1.0 - a) * (y - est.mu0_hat)]);
            let jac = DMatrix::from_diagonal(&DVector::from_vec(vec![-w * a, -w * (1.0 - a)]));
            Ok((psi, jac))
        }),
    )?;
    sandwich.vcov()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xi(alpha: &[f64], mu1: f64, mu0: f64) -> DVector<f64> {
        EstimatingContext::new(alpha, mu1, mu0, 1).xi
    }

    #[test]
    fn gradient_has_two_nonzero_entries() {
        let g = att_gradient(3);
        assert_eq!(g.len(), 6);
        assert_eq!(g.iter().filter(|v| **v != 0.0).count(), 2);
        assert_eq!(g[4], 1.0);
        assert_eq!(g[5], -1.0);
    }

    #[test]
    fn treated_unit_at_mu1() {
        let alpha = [0.3, -0.7];
        let u = Unit::new(vec![0.0], true, 2.5);
        let v = psi(&u, &xi(&alpha, 2.5, -1.0)).unwrap();
        let e = expit(0.3);
        assert!((v[0] - (1.0 - e)).abs() < 1e-15);
        assert_eq!(v[1], 0.0);
        assert_eq!(v[2], 0.0);
        assert_eq!(v[3], 0.0);
    }

    #[test]
    fn control_unit_at_mu0_with_zero_alpha() {
        let u = Unit::new(vec![0.0], false, 1.25);
        let v = psi(&u, &xi(&[0.0, 0.0], 0.0, 1.25)).unwrap();
        assert_eq!(v.as_slice(), &[-0.5, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn treated_jacobian_has_no_control_or_alpha_dependence() {
        let u = Unit::new(vec![1.3, -0.2], true, 0.7);
        let jac = psi_jacobian(&u, &xi(&[0.1, 0.5, -0.4], 0.2, 0.9)).unwrap();
        let p = 3;
        for c in 0..p + 2 {
            assert_eq!(jac[(p + 1, c)], 0.0);
        }
        for c in 0..p {
            assert_eq!(jac[(p, c)], 0.0);
        }
        assert_eq!(jac[(p, p)], -1.0);
        // upper-right block is structurally zero
        for r in 0..p {
            assert_eq!(jac[(r, p)], 0.0);
            assert_eq!(jac[(r, p + 1)], 0.0);
        }
    }

    #[test]
    fn control_jacobian_alpha0_entry() {
        let u = Unit::new(vec![0.0], false, 1.0);
        let jac = psi_jacobian(&u, &xi(&[0.0, 0.0], 0.0, 0.0)).unwrap();
        assert_eq!(jac[(3, 0)], 1.0);
        assert_eq!(jac[(3, 1)], 0.0);
        assert_eq!(jac[(3, 3)], -1.0);
    }

    #[test]
    fn finite_differences_match_analytic() {
        let u = Unit::new(vec![0.8, -1.1], false, 2.3);
        let x = xi(&[-0.4, 0.9, 0.3], 0.5, 1.7);
        let a = psi_jacobian(&u, &x).unwrap();
        let f = psi_jacobian_numeric(&u, &x).unwrap();
        for (av, fv) in a.iter().zip(f.iter()) {
            assert!((av - fv).abs() <= 1e-6 * av.abs().max(1.0), "{av} vs {fv}");
        }
    }

    #[test]
    fn wrong_xi_length_and_overflow() {
        let u = Unit::new(vec![1.0], false, 0.0);
        assert!(psi(&u, &DVector::zeros(3)).is_err());
        assert!(matches!(
            psi(&u, &xi(&[0.0, 701.0], 0.0, 0.0)),
            Err(Error::WeightOverflow { .. })
        ));
    }

    #[test]
    fn singular_bread_is_reported() {
        let s = Sandwich {
            bread: DMatrix::zeros(2, 2),
            meat: DMatrix::identity(2, 2),
        };
        assert!(matches!(s.vcov(), Err(Error::SingularBread { .. })));
    }
}
