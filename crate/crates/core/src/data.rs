//! In-memory observational dataset: covariates `L`, binary treatment `A`
//! and one or more outcome columns `Y`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A single unit `(L, A, Y)` pulled out of a [`Dataset`] for one outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub covariates: Vec<f64>,
    pub treated: bool,
    pub outcome: f64,
}

impl Unit {
    pub fn new(covariates: Vec<f64>, treated: bool, outcome: f64) -> Self {
        Self {
            covariates,
            treated,
            outcome,
        }
    }

    /// Treatment indicator as a number (1.0 treated, 0.0 control).
    pub fn a(&self) -> f64 {
        if self.treated {
            1.0
        } else {
            0.0
        }
    }

    /// Design row `(1, Lᵀ)`.
    pub fn design_row(&self) -> DVector<f64> {
        let mut x = DVector::zeros(self.covariates.len() + 1);
        x[0] = 1.0;
        for (j, &l) in self.covariates.iter().enumerate() {
            x[j + 1] = l;
        }
        x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    covariates: DMatrix<f64>,
    treatment: Vec<bool>,
    outcomes: DMatrix<f64>,
}

impl Dataset {
    /// Builds a dataset, checking shapes, finiteness, `n >= J + 2`, and that
    /// both treatment groups are present.
    pub fn new(covariates: DMatrix<f64>, treatment: Vec<bool>, outcomes: DMatrix<f64>) -> Result<Self> {
        let n = treatment.len();
        if covariates.nrows() != n || outcomes.nrows() != n {
            return Err(Error::InvalidData(format!(
                "row mismatch: {} covariate rows, {} treatment entries, {} outcome rows",
                covariates.nrows(),
                n,
                outcomes.nrows()
            )));
        }
        if outcomes.ncols() == 0 {
            return Err(Error::InvalidData("at least one outcome column is required".into()));
        }
        let j = covariates.ncols();
        if n < j + 2 {
            return Err(Error::InvalidData(format!(
                "need at least J + 2 = {} units, got {n}",
                j + 2
            )));
        }
        if covariates.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite covariate value".into()));
        }
        if let Some(index) = (0..n).find(|&i| outcomes.row(i).iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFiniteOutcome { index });
        }
        if !treatment.iter().any(|&a| a) {
            return Err(Error::EmptyGroup("treated"));
        }
        if treatment.iter().all(|&a| a) {
            return Err(Error::EmptyGroup("control"));
        }
        Ok(Self {
            covariates,
            treatment,
            outcomes,
        })
    }

    /// Convenience constructor for the single-covariate, single-outcome case.
    pub fn from_columns(covariate: &[f64], treatment: &[bool], outcome: &[f64]) -> Result<Self> {
        let n = treatment.len();
        if covariate.len() != n || outcome.len() != n {
            return Err(Error::InvalidData("column lengths differ".into()));
        }
        Self::new(
            DMatrix::from_column_slice(n, 1, covariate),
            treatment.to_vec(),
            DMatrix::from_column_slice(n, 1, outcome),
        )
    }

    pub fn n(&self) -> usize {
        self.treatment.len()
    }

    /// Number of covariates `J` (excluding the intercept).
    pub fn n_covariates(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn n_outcomes(&self) -> usize {
        self.outcomes.ncols()
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn treatment(&self) -> &[bool] {
        &self.treatment
    }

    pub fn outcomes(&self) -> &DMatrix<f64> {
        &self.outcomes
    }

    pub fn n_treated(&self) -> usize {
        self.treatment.iter().filter(|&&a| a).count()
    }

    pub fn outcome(&self, index: usize) -> Result<Vec<f64>> {
        if index >= self.n_outcomes() {
            return Err(Error::InvalidData(format!(
                "outcome index {index} out of range ({} outcomes)",
                self.n_outcomes()
            )));
        }
        Ok(self.outcomes.column(index).iter().copied().collect())
    }

    /// Design matrix `[1, L]`, `n × (J + 1)`.
    pub fn design(&self) -> DMatrix<f64> {
        let (n, j) = self.covariates.shape();
        DMatrix::from_fn(n, j + 1, |i, k| if k == 0 { 1.0 } else { self.covariates[(i, k - 1)] })
    }

    pub fn unit(&self, i: usize, outcome_index: usize) -> Unit {
        Unit {
            covariates: self.covariates.row(i).iter().copied().collect(),
            treated: self.treatment[i],
            outcome: self.outcomes[(i, outcome_index)],
        }
    }

    pub fn units(&self, outcome_index: usize) -> impl Iterator<Item = Unit> + '_ {
        (0..self.n()).map(move |i| self.unit(i, outcome_index))
    }

    /// Same units with one outcome column kept.
    pub fn select_outcome(&self, index: usize) -> Result<Dataset> {
        let y = self.outcome(index)?;
        Ok(Dataset {
            covariates: self.covariates.clone(),
            treatment: self.treatment.clone(),
            outcomes: DMatrix::from_column_slice(self.n(), 1, &y),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_single_group() {
        let err = Dataset::from_columns(&[0.0, 1.0, 0.0], &[true, true, true], &[1.0, 2.0, 3.0]).unwrap_err();
        assert!(matches!(err, Error::EmptyGroup("control")));
        let err = Dataset::from_columns(&[0.0, 1.0, 0.0], &[false; 3], &[1.0, 2.0, 3.0]).unwrap_err();
        assert!(matches!(err, Error::EmptyGroup("treated")));
    }

    #[test]
    fn rejects_too_few_rows_and_non_finite() {
        assert!(Dataset::from_columns(&[0.0, 1.0], &[true, false], &[1.0, 2.0]).is_err());
        let err = Dataset::from_columns(&[0.0, 1.0, 2.0], &[true, false, true], &[1.0, f64::NAN, 3.0]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteOutcome { index: 1 }));
        assert!(Dataset::from_columns(&[0.0, f64::INFINITY, 2.0], &[true, false, true], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn design_has_leading_intercept() {
        let d = Dataset::from_columns(&[0.5, 1.5, 2.5], &[true, false, true], &[1.0, 2.0, 3.0]).unwrap();
        let x = d.design();
        assert_eq!(x.shape(), (3, 2));
        assert_eq!(x[(1, 0)], 1.0);
        assert_eq!(x[(1, 1)], 1.5);
        let u = d.unit(2, 0);
        assert_eq!(u.design_row().as_slice(), &[1.0, 2.5]);
        assert_eq!(u.a(), 1.0);
    }
}
