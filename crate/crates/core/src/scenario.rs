//! Parametric data-generating processes with a single covariate `L`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CovariateDistribution {
    Bernoulli {
        p: f64,
    },
    /// Normal with the given mean and unit variance.
    Normal {
        mean: f64,
    },
}

/// `logit P(A = 1 | L = l) = intercept + slope · l`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogitCoefficients {
    pub intercept: f64,
    pub slope: f64,
}

/// `E(Yᵃ | L = l) = treatment · a + covariate · l + interaction · a · l`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeCoefficients {
    pub treatment: f64,
    pub covariate: f64,
    pub interaction: f64,
}

impl OutcomeCoefficients {
    pub fn mean(&self, a: f64, l: f64) -> f64 {
        self.treatment * a + self.covariate * l + self.interaction * a * l
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub covariate: CovariateDistribution,
    pub logit: LogitCoefficients,
    pub outcome: OutcomeCoefficients,
    pub outcome_sd: f64,
}

pub const PRESET_NAMES: [&str; 4] = ["i", "ii", "iii", "iv"];

impl ScenarioSpec {
    pub fn new(covariate: CovariateDistribution, logit: (f64, f64), outcome: (f64, f64, f64), outcome_sd: f64) -> Self {
        Self {
            covariate,
            logit: LogitCoefficients {
                intercept: logit.0,
                slope: logit.1,
            },
            outcome: OutcomeCoefficients {
                treatment: outcome.0,
                covariate: outcome.1,
                interaction: outcome.2,
            },
            outcome_sd,
        }
    }

    /// The four reference scenarios, all with outcome SD 0.5.
    pub fn preset(name: &str) -> Option<Self> {
        use CovariateDistribution::*;
        let spec = match name.trim().to_ascii_lowercase().as_str() {
            "i" | "1" => Self::new(Bernoulli { p: 0.5 }, (-1.0, -2.0), (-1.0, -1.5, 1.5), 0.5),
            "ii" | "2" => Self::new(Bernoulli { p: 0.3 }, (1.0, 0.1), (1.0, 1.5, 0.5), 0.5),
            "iii" | "3" => Self::new(Normal { mean: 0.0 }, (1.0, 0.1), (1.0, 0.5, -1.5), 0.5),
            "iv" | "4" => Self::new(Normal { mean: 1.0 }, (1.0, -1.0), (1.0, -1.5, -0.5), 0.5),
            _ => return None,
        };
        Some(spec)
    }

    pub fn presets() -> Vec<(&'static str, Self)> {
        PRESET_NAMES.iter().map(|&n| (n, Self::preset(n).unwrap())).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.logit.intercept,
            self.logit.slope,
            self.outcome.treatment,
            self.outcome.covariate,
            self.outcome.interaction,
            self.outcome_sd,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidScenario("coefficients must be finite".into()));
        }
        // written so that NaN fails too
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.outcome_sd > 0.0) {
            return Err(Error::InvalidScenario(format!(
                "outcome_sd must be positive, got {}",
                self.outcome_sd
            )));
        }
        match self.covariate {
            CovariateDistribution::Bernoulli { p } if !(p > 0.0 && p < 1.0) => Err(Error::InvalidScenario(format!(
                "Bernoulli probability must lie in (0, 1), got {p}"
            ))),
            CovariateDistribution::Normal { mean } if !mean.is_finite() => {
                Err(Error::InvalidScenario("normal mean must be finite".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn linear_predictor(&self, l: f64) -> f64 {
        self.logit.intercept + self.logit.slope * l
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let spec: Self = toml::from_str(s).map_err(|e| Error::InvalidScenario(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes to TOML")
    }

    /// Reads a `.json` file as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => Self::from_json_str(&text),
            _ => Self::from_toml_str(&text),
        }
    }
}
