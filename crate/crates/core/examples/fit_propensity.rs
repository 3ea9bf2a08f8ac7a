//! Fit the logistic propensity model on simulated scenario (i) data and
//! inspect the ATT weights.
//!
//! ```bash
//! cargo run --example fit_propensity -- [n] [seed]
//! ```

use ipw_att::propensity::{fit_logistic, weight_diagnostic};
use ipw_att::scenario::ScenarioSpec;
use ipw_att::simulate::generate_dataset;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n = args.first().map(|s| s.parse()).transpose()?.unwrap_or(10_000);
    let seed = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(1);

    let spec = ScenarioSpec::preset("i").unwrap();
    let data = generate_dataset(&spec, n, seed)?;
    let fit = fit_logistic(&data)?;
    println!("true alpha   ({}, {})", spec.logit.intercept, spec.logit.slope);
    println!("fitted alpha ({:.4}, {:.4})", fit.alpha[0], fit.alpha[1]);
    println!(
        "Newton iterations {}, score norm {:.1e}",
        fit.iterations, fit.score_norm
    );

    // E[W] = 2 p1: the control weights reproduce the treated count on average
    let diag = weight_diagnostic(&fit.weights, data.treatment())?;
    println!(
        "mean weight {:.4}, 2 x treated share {:.4}",
        diag.mean_weight, diag.expected_mean
    );

    let max_control = fit
        .weights
        .iter()
        .zip(data.treatment())
        .filter(|(_, &t)| !t)
        .map(|(w, _)| *w)
        .fold(0.0, f64::max);
    println!("largest control weight {max_control:.4}");
    Ok(())
}
