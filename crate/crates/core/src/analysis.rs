//! Multi-outcome analysis: CSV ingestion, per-outcome reports sharing one
//! propensity fit, and plot-data export.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::att::estimate_att;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::propensity::{fit_logistic, weight_diagnostic, PropensityFit, WeightDiagnostic};
use crate::sandwich::{see_variance_with, JacobianMethod};
use crate::simulate::wald_ci;

/// A numeric table read from a headered CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    /// Column-major values.
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        if headers.is_empty() {
            return Err(Error::Parse {
                row: 1,
                column: String::new(),
                message: "missing header row".into(),
            });
        }
        let mut columns = vec![Vec::new(); headers.len()];
        for (r, record) in rdr.records().enumerate() {
            // 1-based file line numbers, header on line 1
            let row = r + 2;
            let record = record?;
            if record.len() != headers.len() {
                return Err(Error::Parse {
                    row,
                    column: String::new(),
                    message: format!("expected {} fields, found {}", headers.len(), record.len()),
                });
            }
            for (c, field) in record.iter().enumerate() {
                let value: f64 = field.parse().map_err(|_| Error::Parse {
                    row,
                    column: headers[c].clone(),
                    message: if field.is_empty() {
                        "missing value".into()
                    } else {
                        format!("'{field}' is not a number")
                    },
                })?;
                if !value.is_finite() {
                    return Err(Error::Parse {
                        row,
                        column: headers[c].clone(),
                        message: format!("non-finite value '{field}'"),
                    });
                }
                columns[c].push(value);
            }
        }
        Ok(Self { headers, columns })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.headers
            .iter()
            .position(|h| h == name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| Error::MissingColumn(name.to_owned()))
    }

    /// Builds a dataset from named columns. The treatment column must hold
    /// only 0 and 1.
    pub fn to_dataset(&self, treatment: &str, covariates: &[String], outcomes: &[String]) -> Result<Dataset> {
        let a_col = self.column(treatment)?;
        let a = a_col
            .iter()
            .enumerate()
            .map(|(i, &v)| match v {
                1.0 => Ok(true),
                0.0 => Ok(false),
                _ => Err(Error::Parse {
                    row: i + 2,
                    column: treatment.to_owned(),
                    message: format!("treatment must be 0 or 1, found {v}"),
                }),
            })
            .collect::<Result<Vec<bool>>>()?;
        let n = a.len();
        let gather = |names: &[String]| -> Result<DMatrix<f64>> {
            let cols = names.iter().map(|c| self.column(c)).collect::<Result<Vec<_>>>()?;
            Ok(DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]))
        };
        Dataset::new(gather(covariates)?, a, gather(outcomes)?)
    }
}

/// Writes `L1..LJ, A, <outcome ids>` at full (round-trip) precision.
pub fn write_dataset_csv<W: Write>(
    writer: W,
    data: &Dataset,
    covariate_names: &[String],
    outcome_names: &[String],
) -> Result<()> {
    if covariate_names.len() != data.n_covariates() || outcome_names.len() != data.n_outcomes() {
        return Err(Error::InvalidData("column names do not match the dataset".into()));
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = covariate_names.iter().map(String::as_str).collect();
    header.push("A");
    header.extend(outcome_names.iter().map(String::as_str));
    w.write_record(&header)?;
    for i in 0..data.n() {
        let mut row: Vec<String> = data.covariates().row(i).iter().map(|v| v.to_string()).collect();
        row.push(if data.treatment()[i] { "1" } else { "0" }.to_owned());
        row.extend(data.outcomes().row(i).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeReport {
    pub outcome_id: String,
    pub att: f64,
    pub se_see: f64,
    pub se_hw: f64,
    pub se_ratio: f64,
    pub p_see: f64,
    pub p_hw: f64,
    pub ci_see_lo: f64,
    pub ci_see_hi: f64,
    pub ci_hw_lo: f64,
    pub ci_hw_hi: f64,
}

/// Two-sided normal-reference p-value for `H₀: ATT = 0`.
pub fn two_sided_p(estimate: f64, se: f64) -> f64 {
    if se == 0.0 {
        return if estimate == 0.0 { 1.0 } else { 0.0 };
    }
    2.0 * Normal::standard().sf((estimate / se).abs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub fit: PropensityFit,
    pub diagnostic: WeightDiagnostic,
    /// Sorted by `p_see` ascending, ties by `outcome_id`.
    pub reports: Vec<OutcomeReport>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisOptions {
    pub ci_level: f64,
    pub jacobian: JacobianMethod,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            ci_level: 0.95,
            jacobian: JacobianMethod::Analytic,
        }
    }
}

/// Fits the propensity model once and reports every outcome column with the
/// same weights.
pub fn analyze(data: &Dataset, outcome_ids: &[String], options: &AnalysisOptions) -> Result<Analysis> {
    if outcome_ids.len() != data.n_outcomes() {
        return Err(Error::InvalidData(format!(
            "{} outcome ids for {} outcome columns",
            outcome_ids.len(),
            data.n_outcomes()
        )));
    }
    if !(options.ci_level > 0.0 && options.ci_level < 1.0) {
        return Err(Error::InvalidData(format!(
            "ci level {} outside (0, 1)",
            options.ci_level
        )));
    }
    let fit = fit_logistic(data)?;
    let diagnostic = weight_diagnostic(&fit.weights, data.treatment())?;
    let mut reports = (0..data.n_outcomes())
        .into_par_iter()
        .map(|g| report_outcome(data, &fit, g, &outcome_ids[g], options))
        .collect::<Result<Vec<_>>>()?;
    sort_reports(&mut reports);
    Ok(Analysis {
        fit,
        diagnostic,
        reports,
    })
}

fn report_outcome(
    data: &Dataset,
    fit: &PropensityFit,
    outcome_index: usize,
    outcome_id: &str,
    options: &AnalysisOptions,
) -> Result<OutcomeReport> {
    let est = estimate_att(data, &fit.weights, outcome_index)?;
    let blocks = see_variance_with(data, fit, &est, outcome_index, options.jacobian)?;
    let (se_see, se_hw) = (blocks.se_see(), blocks.se_hw());
    let (ci_see_lo, ci_see_hi) = wald_ci(est.att, se_see, options.ci_level);
    let (ci_hw_lo, ci_hw_hi) = wald_ci(est.att, se_hw, options.ci_level);
    Ok(OutcomeReport {
        outcome_id: outcome_id.to_owned(),
        att: est.att,
        se_see,
        se_hw,
        se_ratio: se_see / se_hw,
        p_see: two_sided_p(est.att, se_see),
        p_hw: two_sided_p(est.att, se_hw),
        ci_see_lo,
        ci_see_hi,
        ci_hw_lo,
        ci_hw_hi,
    })
}

pub fn sort_reports(reports: &mut [OutcomeReport]) {
    reports.sort_by(|a, b| {
        a.p_see
            .partial_cmp(&b.p_see)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.outcome_id.cmp(&b.outcome_id))
    });
}

pub fn write_reports_csv<W: Write>(writer: W, reports: &[OutcomeReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in reports {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_reports_csv<R: Read>(reader: R) -> Result<Vec<OutcomeReport>> {
    let mut rdr = csv::Reader::from_reader(reader);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopKRow {
    pub outcome_id: String,
    pub p_see: f64,
    pub p_hw: f64,
    pub rank_see: usize,
    pub rank_hw: usize,
    pub in_top_see: bool,
    pub in_top_hw: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotData {
    pub se_ratio_histogram: Vec<HistogramBin>,
    pub top_k: Vec<TopKRow>,
}

impl PlotData {
    pub fn write_histogram<W: Write>(&self, writer: W) -> Result<()> {
        write_rows(writer, &self.se_ratio_histogram)
    }

    pub fn write_top_k<W: Write>(&self, writer: W) -> Result<()> {
        write_rows(writer, &self.top_k)
    }

    /// Set of outcomes in the top k by `p_see` but not by `p_hw`, or vice versa.
    pub fn rankings_differ(&self) -> bool {
        self.top_k.iter().any(|r| r.in_top_see != r.in_top_hw)
    }
}

fn write_rows<W: Write, T: Serialize>(writer: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Equal-width histogram of `values` over `[min, max]` (a unit-wide window
/// centred on the value when all values coincide). The last bin is closed.
pub fn histogram(values: &[f64], bins: usize) -> Vec<HistogramBin> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if max > min { (min, max) } else { (min - 0.5, max + 0.5) };
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let k = (((v - lo) / width).floor() as usize).min(bins - 1);
        counts[k] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, count)| HistogramBin {
            lower: lo + k as f64 * width,
            upper: if k + 1 == bins { hi } else { lo + (k + 1) as f64 * width },
            count,
        })
        .collect()
}

fn ranks_by(reports: &[OutcomeReport], key: fn(&OutcomeReport) -> f64) -> HashMap<String, usize> {
    let mut order: Vec<&OutcomeReport> = reports.iter().collect();
    order.sort_by(|a, b| {
        key(a)
            .partial_cmp(&key(b))
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.outcome_id.cmp(&b.outcome_id))
    });
    order
        .into_iter()
        .enumerate()
        .map(|(i, r)| (r.outcome_id.clone(), i + 1))
        .collect()
}

/// SE-ratio histogram and the union of the top `k` outcomes ranked by each
/// p-value.
pub fn export_plot_data(reports: &[OutcomeReport], bins: usize, k: usize) -> Result<PlotData> {
    if reports.is_empty() {
        return Err(Error::InvalidData("no reports to export".into()));
    }
    let ratios: Vec<f64> = reports.iter().map(|r| r.se_ratio).collect();
    let rank_see = ranks_by(reports, |r| r.p_see);
    let rank_hw = ranks_by(reports, |r| r.p_hw);
    let mut top_k: Vec<TopKRow> = reports
        .iter()
        .filter_map(|r| {
            let (rs, rh) = (rank_see[&r.outcome_id], rank_hw[&r.outcome_id]);
            (rs <= k || rh <= k).then(|| TopKRow {
                outcome_id: r.outcome_id.clone(),
                p_see: r.p_see,
                p_hw: r.p_hw,
                rank_see: rs,
                rank_hw: rh,
                in_top_see: rs <= k,
                in_top_hw: rh <= k,
            })
        })
        .collect();
    top_k.sort_by_key(|r| r.rank_see);
    Ok(PlotData {
        se_ratio_histogram: histogram(&ratios, bins),
        top_k,
    })
}
