//! Hajek-ratio IPW estimator of the average treatment effect in the treated.

use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AttEstimate {
    pub mu1_hat: f64,
    pub mu0_hat: f64,
    pub att: f64,
    pub n_treated: usize,
    pub n_control: usize,
}

/// IPW ATT for outcome column `outcome_index` of `data`.
pub fn estimate_att(data: &Dataset, weights: &[f64], outcome_index: usize) -> Result<AttEstimate> {
    let y = data.outcome(outcome_index)?;
    estimate_att_from(data.treatment(), &y, weights)
}

/// Same estimator on raw columns.
pub fn estimate_att_from(treatment: &[bool], outcome: &[f64], weights: &[f64]) -> Result<AttEstimate> {
    if treatment.len() != outcome.len() || treatment.len() != weights.len() {
        return Err(Error::InvalidData(format!(
            "length mismatch: {} treatment, {} outcome, {} weights",
            treatment.len(),
            outcome.len(),
            weights.len()
        )));
    }
    let mut wy1 = CompensatedSum::new();
    let mut w1 = CompensatedSum::new();
    let mut wy0 = CompensatedSum::new();
    let mut w0 = CompensatedSum::new();
    let (mut n_treated, mut n_control) = (0, 0);
    for (i, ((&t, &y), &w)) in treatment.iter().zip(outcome).zip(weights).enumerate() {
        if !y.is_finite() {
            return Err(Error::NonFiniteOutcome { index: i });
        }
        if !(w.is_finite() && w > 0.0) {
            return Err(Error::InvalidData(format!(
                "weight {w} at unit {i} is not positive and finite"
            )));
        }
        if t {
            wy1.add(w * y);
            w1.add(w);
            n_treated += 1;
        } else {
            wy0.add(w * y);
            w0.add(w);
            n_control += 1;
        }
    }
    if n_treated == 0 || w1.value() == 0.0 {
        return Err(Error::EmptyGroup("treated"));
    }
    if n_control == 0 || w0.value() == 0.0 {
        return Err(Error::EmptyGroup("control"));
    }
    let mu1_hat = wy1.value() / w1.value();
    let mu0_hat = wy0.value() / w0.value();
    Ok(AttEstimate {
        mu1_hat,
        mu0_hat,
        att: mu1_hat - mu0_hat,
        n_treated,
        n_control,
    })
}
