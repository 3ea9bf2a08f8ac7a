//! Monte Carlo coverage study for the four reference scenarios.
//!
//! ```bash
//! cargo run --release --example simulation_study -- [replicates] [n] [seed]
//! ```

use ipw_att::oracle::asymptotic_variance;
use ipw_att::scenario::ScenarioSpec;
use ipw_att::simulate::{run_simulation, SimulationPlan};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let replicates = args.first().map(|s| s.parse()).transpose()?.unwrap_or(1000);
    let n = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(1000);
    let seed = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(2021);

    println!("n = {n}, replicates = {replicates}, seed = {seed}");
    println!(
        "{:>8} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
        "scenario", "ASE SEE", "cov SEE", "ASE HW", "cov HW", "ratio", "asym", "SEE>HW"
    );
    for (name, spec) in ScenarioSpec::presets() {
        let plan = SimulationPlan::new(spec, n, replicates, seed);
        let s = run_simulation(&plan)?;
        let asym = asymptotic_variance(&spec)?;
        println!(
            "{:>8} {:>9.4} {:>9.3} {:>9.4} {:>9.3} {:>9.3} {:>9.3} {:>9.3}",
            name, s.ase_see, s.coverage_see, s.ase_hw, s.coverage_hw, s.ase_ratio, asym.sd_ratio, s.frac_see_above_hw
        );
    }
    Ok(())
}
