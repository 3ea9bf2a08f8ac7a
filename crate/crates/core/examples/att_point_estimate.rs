//! IPW estimate of the effect of treatment on the treated, compared with the
//! naive difference in means and the population value.
//!
//! ```bash
//! cargo run --example att_point_estimate -- [scenario] [n] [seed]
//! ```

use ipw_att::att::estimate_att;
use ipw_att::oracle::population_moments;
use ipw_att::propensity::fit_logistic;
use ipw_att::scenario::ScenarioSpec;
use ipw_att::simulate::generate_dataset;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let name = args.first().map(String::as_str).unwrap_or("i");
    let n = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(100_000);
    let seed = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(7);

    let spec = ScenarioSpec::preset(name).ok_or("unknown scenario")?;
    let data = generate_dataset(&spec, n, seed)?;
    let fit = fit_logistic(&data)?;
    let ipw = estimate_att(&data, &fit.weights, 0)?;
    let naive = estimate_att(&data, &vec![1.0; n], 0)?;
    let truth = population_moments(&spec)?;

    println!("scenario ({name}), n = {n}");
    println!("treated {} / control {}", ipw.n_treated, ipw.n_control);
    println!("mu1 {:.4}  mu0 {:.4}", ipw.mu1_hat, ipw.mu0_hat);
    println!("IPW ATT              {:.4}", ipw.att);
    println!("difference in means  {:.4}", naive.att);
    println!("population ATT       {:.4}", truth.att);
    Ok(())
}
