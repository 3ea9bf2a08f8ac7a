//! Seeded data generation and Monte Carlo coverage studies.
//!
//! Every random draw comes from a ChaCha20 stream keyed by
//! `(seed, attempt)` with the stream id selecting the variable (covariate,
//! treatment, each outcome column). Replicate `r` of a study uses
//! `derive_seed(plan.seed, r)`, so results do not depend on the order in
//! which replicates run.

use nalgebra::DMatrix;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::att::estimate_att;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numeric::expit;
use crate::oracle::population_moments;
use crate::propensity::fit_logistic;
use crate::sandwich::see_variance;
use crate::scenario::{CovariateDistribution, OutcomeCoefficients, ScenarioSpec};

pub const MAX_GENERATION_ATTEMPTS: usize = 100;

const COVARIATE_STREAM: u64 = 1;
const TREATMENT_STREAM: u64 = 2;
const OUTCOME_STREAM: u64 = 3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for sub-stream `index` of `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x6a09_e667_f3bc_c909)))
}

/// Independent generator for one variable of one draw.
pub fn variable_stream(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut key = [0u8; 32];
    let mut state = seed;
    for chunk in key.chunks_exact_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    let mut rng = ChaCha20Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

/// Uniform on the open interval (0, 1) with 53 random bits.
fn open_unit(rng: &mut impl RngCore) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal draw by inversion.
fn standard_normal(rng: &mut impl RngCore) -> f64 {
    Normal::standard().inverse_cdf(open_unit(rng))
}

fn draw_covariate(dist: CovariateDistribution, rng: &mut impl RngCore) -> f64 {
    match dist {
        CovariateDistribution::Bernoulli { p } => {
            if open_unit(rng) < p {
                1.0
            } else {
                0.0
            }
        }
        CovariateDistribution::Normal { mean } => mean + standard_normal(rng),
    }
}

fn draw_design(spec: &ScenarioSpec, n: usize, key: u64) -> (Vec<f64>, Vec<bool>) {
    let mut l_rng = variable_stream(key, COVARIATE_STREAM);
    let mut a_rng = variable_stream(key, TREATMENT_STREAM);
    let l: Vec<f64> = (0..n).map(|_| draw_covariate(spec.covariate, &mut l_rng)).collect();
    let a = l
        .iter()
        .map(|&l| open_unit(&mut a_rng) < expit(spec.linear_predictor(l)))
        .collect();
    (l, a)
}

fn draw_outcome(model: &OutcomeCoefficients, sd: f64, l: &[f64], a: &[bool], key: u64, stream: u64) -> Vec<f64> {
    let mut rng = variable_stream(key, stream);
    l.iter()
        .zip(a)
        .map(|(&l, &a)| model.mean(if a { 1.0 } else { 0.0 }, l) + sd * standard_normal(&mut rng))
        .collect()
}

/// Shared `(L, A)` draw, regenerated until both treatment groups appear.
fn draw_groups(spec: &ScenarioSpec, n: usize, seed: u64) -> Result<(Vec<f64>, Vec<bool>, u64)> {
    spec.validate()?;
    for attempt in 0..MAX_GENERATION_ATTEMPTS {
        let key = derive_seed(seed, attempt as u64);
        let (l, a) = draw_design(spec, n, key);
        let treated = a.iter().filter(|&&t| t).count();
        if treated > 0 && treated < n {
            return Ok((l, a, key));
        }
    }
    Err(Error::DegenerateDraws {
        attempts: MAX_GENERATION_ATTEMPTS,
    })
}

/// `n` draws of `(L, A, Y)` from `spec`; deterministic in `(spec, n, seed)`.
pub fn generate_dataset(spec: &ScenarioSpec, n: usize, seed: u64) -> Result<Dataset> {
    let (l, a, key) = draw_groups(spec, n, seed)?;
    let y = draw_outcome(&spec.outcome, spec.outcome_sd, &l, &a, key, OUTCOME_STREAM);
    Dataset::from_columns(&l, &a, &y)
}

/// Many outcomes measured on one shared set of units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    /// Source of `L` and `A`; its outcome model is ignored.
    pub design: ScenarioSpec,
    pub outcome_models: Vec<OutcomeCoefficients>,
    pub outcome_sd: f64,
}

impl CorpusSpec {
    /// Alternates scenario (i)-type and scenario (ii)-type outcome models on
    /// scenario (i) units, with effect sizes (treatment and interaction
    /// terms) scaled by a per-outcome factor in `[0, max_effect_scale)`.
    pub fn mixed(n_outcomes: usize, max_effect_scale: f64, seed: u64) -> Self {
        let design = ScenarioSpec::preset("i").unwrap();
        let bases = [design.outcome, ScenarioSpec::preset("ii").unwrap().outcome];
        let mut rng = variable_stream(derive_seed(seed, u64::MAX), 0);
        let outcome_models = (0..n_outcomes)
            .map(|g| {
                let base = bases[g % 2];
                let s = max_effect_scale * open_unit(&mut rng);
                OutcomeCoefficients {
                    treatment: base.treatment * s,
                    covariate: base.covariate,
                    interaction: base.interaction * s,
                }
            })
            .collect();
        Self {
            design,
            outcome_models,
            outcome_sd: design.outcome_sd,
        }
    }

    /// Pure-noise outcomes (every coefficient zero) on scenario (i) units.
    pub fn null(n_outcomes: usize) -> Self {
        let design = ScenarioSpec::preset("i").unwrap();
        let zero = OutcomeCoefficients {
            treatment: 0.0,
            covariate: 0.0,
            interaction: 0.0,
        };
        Self {
            design,
            outcome_models: vec![zero; n_outcomes],
            outcome_sd: 1.0,
        }
    }

    pub fn outcome_ids(&self) -> Vec<String> {
        let width = self.outcome_models.len().to_string().len();
        (0..self.outcome_models.len())
            .map(|g| format!("y{:0width$}", g + 1))
            .collect()
    }

    pub fn generate(&self, n: usize, seed: u64) -> Result<Dataset> {
        if self.outcome_models.is_empty() {
            return Err(Error::InvalidData("corpus needs at least one outcome".into()));
        }
        let (l, a, key) = draw_groups(&self.design, n, seed)?;
        let columns: Vec<Vec<f64>> = self
            .outcome_models
            .iter()
            .enumerate()
            .map(|(g, model)| draw_outcome(model, self.outcome_sd, &l, &a, key, OUTCOME_STREAM + g as u64))
            .collect();
        let outcomes = DMatrix::from_fn(n, columns.len(), |i, g| columns[g][i]);
        Dataset::new(DMatrix::from_column_slice(n, 1, &l), a, outcomes)
    }
}

/// Two-sided normal-reference interval `estimate ± z · se`.
pub fn wald_ci(estimate: f64, se: f64, level: f64) -> (f64, f64) {
    let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
    (estimate - z * se, estimate + z * se)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationPlan {
    pub scenario: ScenarioSpec,
    pub n: usize,
    pub replicates: usize,
    pub seed: u64,
    pub ci_level: f64,
}

impl SimulationPlan {
    pub fn new(scenario: ScenarioSpec, n: usize, replicates: usize, seed: u64) -> Self {
        Self {
            scenario,
            n,
            replicates,
            seed,
            ci_level: 0.95,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.replicates < 1 {
            return Err(Error::InvalidData("replicates must be at least 1".into()));
        }
        if self.n < 10 {
            return Err(Error::InvalidData(format!("n must be at least 10, got {}", self.n)));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::InvalidData(format!(
                "ci_level must lie in (0, 1), got {}",
                self.ci_level
            )));
        }
        Ok(())
    }

    pub fn replicate_seed(&self, replicate: usize) -> u64 {
        derive_seed(self.seed, replicate as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub att: f64,
    pub se_see: f64,
    pub se_hw: f64,
    pub ci_see_lo: f64,
    pub ci_see_hi: f64,
    pub ci_hw_lo: f64,
    pub ci_hw_hi: f64,
    pub covered_see: bool,
    pub covered_hw: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub n: usize,
    pub replicates: usize,
    pub true_att: f64,
    pub mean_att: f64,
    pub mean_att_mcse: f64,
    pub empirical_sd_att: f64,
    pub ase_see: f64,
    pub ase_see_mcse: f64,
    pub ase_hw: f64,
    pub ase_hw_mcse: f64,
    pub coverage_see: f64,
    pub coverage_see_mcse: f64,
    pub coverage_hw: f64,
    pub coverage_hw_mcse: f64,
    pub ase_ratio: f64,
    /// Fraction of replicates with the SEE standard error above the HW one.
    pub frac_see_above_hw: f64,
}

impl SimulationSummary {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Header plus one data row.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(self)?;
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

/// Fit, estimate and compute both standard errors for one dataset.
pub fn analyze_replicate(data: &Dataset, true_att: f64, ci_level: f64, replicate: usize) -> Result<ReplicateRecord> {
    let fit = fit_logistic(data)?;
    let est = estimate_att(data, &fit.weights, 0)?;
    let blocks = see_variance(data, &fit, &est, 0)?;
    let (se_see, se_hw) = (blocks.se_see(), blocks.se_hw());
    let (ci_see_lo, ci_see_hi) = wald_ci(est.att, se_see, ci_level);
    let (ci_hw_lo, ci_hw_hi) = wald_ci(est.att, se_hw, ci_level);
    Ok(ReplicateRecord {
        replicate,
        att: est.att,
        se_see,
        se_hw,
        ci_see_lo,
        ci_see_hi,
        ci_hw_lo,
        ci_hw_hi,
        covered_see: ci_see_lo <= true_att && true_att <= ci_see_hi,
        covered_hw: ci_hw_lo <= true_att && true_att <= ci_hw_hi,
    })
}

/// Per-replicate records in replicate order. Replicates run in parallel; the
/// first failing replicate (by index) aborts the study.
pub fn run_replicates(plan: &SimulationPlan) -> Result<Vec<ReplicateRecord>> {
    plan.validate()?;
    let true_att = population_moments(&plan.scenario)?.att;
    let results: Vec<Result<ReplicateRecord>> = (0..plan.replicates)
        .into_par_iter()
        .map(|r| {
            generate_dataset(&plan.scenario, plan.n, plan.replicate_seed(r))
                .and_then(|data| analyze_replicate(&data, true_att, plan.ci_level, r))
                .map_err(|e| Error::Replicate {
                    index: r,
                    source: Box::new(e),
                })
        })
        .collect();
    results.into_iter().collect()
}

pub fn run_simulation(plan: &SimulationPlan) -> Result<SimulationSummary> {
    let records = run_replicates(plan)?;
    let true_att = population_moments(&plan.scenario)?.att;
    Ok(summarize(plan.n, true_att, &records))
}

/// Point estimates only, for studies of the sampling variance of the ATT.
pub fn att_draws(plan: &SimulationPlan) -> Result<Vec<f64>> {
    plan.validate()?;
    let results: Vec<Result<f64>> = (0..plan.replicates)
        .into_par_iter()
        .map(|r| {
            let run = || -> Result<f64> {
                let data = generate_dataset(&plan.scenario, plan.n, plan.replicate_seed(r))?;
                let fit = fit_logistic(&data)?;
                Ok(estimate_att(&data, &fit.weights, 0)?.att)
            };
            run().map_err(|e| Error::Replicate {
                index: r,
                source: Box::new(e),
            })
        })
        .collect();
    results.into_iter().collect()
}

/// Mean and standard deviation (denominator `m − 1`; 0 for a single value).
pub fn mean_sd(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let m = values.clone().count();
    let mean = values.clone().sum::<f64>() / m as f64;
    if m < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (m - 1) as f64).sqrt())
}

/// Ordered fold of replicate records into a summary.
pub fn summarize(n: usize, true_att: f64, records: &[ReplicateRecord]) -> SimulationSummary {
    let r = records.len() as f64;
    let root_r = r.sqrt();
    let (mean_att, sd_att) = mean_sd(records.iter().map(|x| x.att));
    let (ase_see, sd_see) = mean_sd(records.iter().map(|x| x.se_see));
    let (ase_hw, sd_hw) = mean_sd(records.iter().map(|x| x.se_hw));
    let coverage = |f: fn(&ReplicateRecord) -> bool| records.iter().filter(|x| f(x)).count() as f64 / r;
    let coverage_see = coverage(|x| x.covered_see);
    let coverage_hw = coverage(|x| x.covered_hw);
    let proportion_se = |p: f64| (p * (1.0 - p) / r).sqrt();
    SimulationSummary {
        n,
        replicates: records.len(),
        true_att,
        mean_att,
        mean_att_mcse: sd_att / root_r,
        empirical_sd_att: sd_att,
        ase_see,
        ase_see_mcse: sd_see / root_r,
        ase_hw,
        ase_hw_mcse: sd_hw / root_r,
        coverage_see,
        coverage_see_mcse: proportion_se(coverage_see),
        coverage_hw,
        coverage_hw_mcse: proportion_se(coverage_hw),
        ase_ratio: ase_see / ase_hw,
        frac_see_above_hw: records.iter().filter(|x| x.se_see > x.se_hw).count() as f64 / r,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wald_intervals() {
        let (lo, hi) = wald_ci(0.0, 1.0, 0.95);
        assert!((hi - 1.959964).abs() < 1e-6 && (lo + 1.959964).abs() < 1e-6);
        assert_eq!(wald_ci(5.0, 0.0, 0.95), (5.0, 5.0));
        let (lo, hi) = wald_ci(1.0, 2.0, 0.6827);
        assert!((lo + 1.0).abs() < 1e-3 && (hi - 3.0).abs() < 1e-3);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = ScenarioSpec::preset("iii").unwrap();
        let a = generate_dataset(&spec, 200, 7).unwrap();
        let b = generate_dataset(&spec, 200, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_dataset(&spec, 200, 8).unwrap());
    }

    #[test]
    fn degenerate_draws_are_reported() {
        let mut spec = ScenarioSpec::preset("i").unwrap();
        spec.logit.intercept = -60.0;
        spec.logit.slope = 0.0;
        assert!(matches!(
            generate_dataset(&spec, 20, 1),
            Err(Error::DegenerateDraws {
                attempts: MAX_GENERATION_ATTEMPTS
            })
        ));
    }

    #[test]
    fn open_unit_never_hits_endpoints() {
        let mut rng = variable_stream(3, 9);
        for _ in 0..10_000 {
            let u = open_unit(&mut rng);
            assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn plan_validation() {
        let spec = ScenarioSpec::preset("i").unwrap();
        assert!(SimulationPlan::new(spec, 9, 1, 0).validate().is_err());
        assert!(SimulationPlan::new(spec, 10, 0, 0).validate().is_err());
        assert!(SimulationPlan::new(spec, 10, 1, 0).validate().is_ok());
    }

    #[test]
    fn summary_of_single_replicate() {
        let spec = ScenarioSpec::preset("i").unwrap();
        let plan = SimulationPlan::new(spec, 500, 1, 11);
        let records = run_replicates(&plan).unwrap();
        let s = run_simulation(&plan).unwrap();
        let r = records[0];
        assert_eq!(s.mean_att, r.att);
        assert_eq!(s.ase_see, r.se_see);
        assert_eq!(s.ase_hw, r.se_hw);
        assert_eq!(s.ase_ratio, r.se_see / r.se_hw);
        assert_eq!(s.coverage_see, if r.covered_see { 1.0 } else { 0.0 });
        assert_eq!(s.empirical_sd_att, 0.0);
        assert!(s.to_csv().unwrap().lines().count() == 2);
    }
}
