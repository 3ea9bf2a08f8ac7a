//! Many outcomes, one propensity fit: a synthetic corpus analysed with both
//! standard errors, written out as report, histogram and top-k CSV files.
//!
//! ```bash
//! cargo run --release --example multi_outcome_analysis -- [out_dir] [outcomes] [n]
//! ```

use std::fs::File;
use std::path::PathBuf;

use ipw_att::analysis::{analyze, export_plot_data, write_reports_csv, AnalysisOptions};
use ipw_att::simulate::CorpusSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let dir = PathBuf::from(args.first().map(String::as_str).unwrap_or("target/multi_outcome"));
    let outcomes = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(100);
    let n = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(1000);
    std::fs::create_dir_all(&dir)?;

    let corpus = CorpusSpec::mixed(outcomes, 2.0, 2021);
    let data = corpus.generate(n, 2021)?;
    let result = analyze(&data, &corpus.outcome_ids(), &AnalysisOptions::default())?;
    println!(
        "mean weight {:.4}, 2 x treated share {:.4}",
        result.diagnostic.mean_weight, result.diagnostic.expected_mean
    );

    let above = result.reports.iter().filter(|r| r.se_ratio > 1.0).count();
    println!("{above} of {outcomes} outcomes have SE(SEE) > SE(HW)");
    println!("{:>6} {:>8} {:>9} {:>9} {:>7}", "id", "ATT", "p SEE", "p HW", "ratio");
    for r in result.reports.iter().take(10) {
        println!(
            "{:>6} {:>8.4} {:>9.2e} {:>9.2e} {:>7.3}",
            r.outcome_id, r.att, r.p_see, r.p_hw, r.se_ratio
        );
    }

    let plot = export_plot_data(&result.reports, 40, 50)?;
    let moved = plot.top_k.iter().filter(|r| r.in_top_see != r.in_top_hw).count();
    println!("top-50 lists share {} outcomes", plot.top_k.len() - moved);

    write_reports_csv(File::create(dir.join("reports.csv"))?, &result.reports)?;
    plot.write_histogram(File::create(dir.join("se_ratio_histogram.csv"))?)?;
    plot.write_top_k(File::create(dir.join("top_k.csv"))?)?;
    println!("wrote {}", dir.display());
    Ok(())
}
