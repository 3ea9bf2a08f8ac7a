//! Population ATT and asymptotic variances for the four reference scenarios,
//! plus a user-defined scenario read from TOML.
//!
//! ```bash
//! cargo run --example asymptotic_table
//! ```

use ipw_att::oracle::{asymptotic_variance, node_doubling_change, DEFAULT_NODES};
use ipw_att::scenario::{CovariateDistribution, ScenarioSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!(
        "{:>8} {:>6} {:>8} {:>9} {:>9} {:>9} {:>9}",
        "scenario", "p1", "ATT", "Sigma", "Sigma*", "constant", "SD ratio"
    );
    let custom = ScenarioSpec::from_toml_str(
        r#"
        outcome_sd = 1.0
        [covariate]
        kind = "normal"
        mean = 0.0
        [logit]
        intercept = 0.5
        slope = -1.5
        [outcome]
        treatment = 1.0
        covariate = 1.0
        interaction = 0.5
        "#,
    )?;
    let mut rows = ScenarioSpec::presets();
    rows.push(("custom", custom));
    for (name, spec) in rows {
        let r = asymptotic_variance(&spec)?;
        println!(
            "{:>8} {:>6.3} {:>8.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
            name, r.p1, r.att, r.sigma, r.sigma_star, r.constant, r.sd_ratio
        );
        if let CovariateDistribution::Normal { .. } = spec.covariate {
            println!(
                "{:>8} quadrature change on doubling nodes: {:.1e}",
                "",
                node_doubling_change(&spec, DEFAULT_NODES)?
            );
        }
    }
    Ok(())
}
