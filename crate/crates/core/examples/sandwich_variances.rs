//! Standard errors with the weights estimated (stacked estimating equations)
//! and treated as known (Huber-White), plus the term that separates them.
//!
//! ```bash
//! cargo run --example sandwich_variances -- [n] [seed]
//! ```

use ipw_att::att::estimate_att;
use ipw_att::propensity::fit_logistic;
use ipw_att::sandwich::{see_variance_with, JacobianMethod};
use ipw_att::scenario::ScenarioSpec;
use ipw_att::simulate::{generate_dataset, wald_ci};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n = args.first().map(|s| s.parse()).transpose()?.unwrap_or(1000);
    let seed = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(2021);

    println!(
        "{:>8} {:>9} {:>8} {:>8} {:>9} {:>20}",
        "scenario", "ATT", "SE SEE", "SE HW", "constant", "95% CI (SEE)"
    );
    for (name, spec) in ScenarioSpec::presets() {
        let data = generate_dataset(&spec, n, seed)?;
        let fit = fit_logistic(&data)?;
        let est = estimate_att(&data, &fit.weights, 0)?;
        let blocks = see_variance_with(&data, &fit, &est, 0, JacobianMethod::Analytic)?;
        let (lo, hi) = wald_ci(est.att, blocks.se_see(), 0.95);
        println!(
            "{:>8} {:>9.4} {:>8.4} {:>8.4} {:>9.3} {:>9.4}, {:>9.4}",
            name,
            est.att,
            blocks.se_see(),
            blocks.se_hw(),
            blocks.decomposition_constant(),
            lo,
            hi
        );
    }

    // The finite-difference Jacobian is slower but needs no derivatives.
    let data = generate_dataset(&ScenarioSpec::preset("ii").unwrap(), n, seed)?;
    let fit = fit_logistic(&data)?;
    let est = estimate_att(&data, &fit.weights, 0)?;
    let numeric = see_variance_with(&data, &fit, &est, 0, JacobianMethod::FiniteDifference)?;
    println!("\nscenario (ii) SE SEE with numeric Jacobian {:.6}", numeric.se_see());
    Ok(())
}
