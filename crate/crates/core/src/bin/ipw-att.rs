use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ipw_att::analysis::{
    analyze, export_plot_data, read_reports_csv, write_dataset_csv, write_reports_csv, AnalysisOptions, Table,
};
use ipw_att::error::{Error, Result};
use ipw_att::oracle::asymptotic_variance_with_nodes;
use ipw_att::propensity::{fit_logistic, weight_diagnostic};
use ipw_att::sandwich::JacobianMethod;
use ipw_att::scenario::ScenarioSpec;
use ipw_att::simulate::{generate_dataset, run_replicates, summarize, CorpusSpec, SimulationPlan};

#[derive(Parser)]
#[command(
    name = "ipw-att",
    version,
    about = "IPW estimation of the average treatment effect on the treated"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the propensity model and print weight diagnostics
    Fit(FitArgs),
    /// ATT with stacked and Huber-White standard errors for every outcome column
    Analyze(AnalyzeArgs),
    /// Monte Carlo coverage study for a scenario
    Simulate(SimulateArgs),
    /// Population ATT and asymptotic variances for a scenario
    Asymp(AsympArgs),
    /// SE-ratio histogram and top-k ranking comparison from an analysis report
    ExportPlots(ExportArgs),
    /// Write a synthetic dataset to CSV
    Generate(GenerateArgs),
}

#[derive(Args)]
struct Columns {
    /// Input CSV with a header row
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "A")]
    treatment: String,
    /// Comma-separated covariate columns
    #[arg(long, value_delimiter = ',', required = true)]
    covariates: Vec<String>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    columns: Columns,
}

#[derive(Clone, Copy, ValueEnum)]
enum Jacobian {
    Analytic,
    Numeric,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    columns: Columns,
    /// Comma-separated outcome columns (default: every other column)
    #[arg(long, value_delimiter = ',')]
    outcomes: Vec<String>,
    #[arg(long, default_value_t = 0.95)]
    ci_level: f64,
    #[arg(long, value_enum, default_value = "analytic")]
    jacobian: Jacobian,
    /// Report CSV (default: stdout)
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Preset name (i, ii, iii, iv) or a TOML/JSON scenario file
    scenario: String,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 1000)]
    replicates: usize,
    #[arg(long, default_value_t = 2021)]
    seed: u64,
    #[arg(long, default_value_t = 0.95)]
    ci_level: f64,
    /// Summary as JSON (default: stdout)
    #[arg(long)]
    json: Option<PathBuf>,
    /// Summary as a one-row CSV
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Per-replicate estimates, SEs and coverage flags
    #[arg(long)]
    replicates_csv: Option<PathBuf>,
}

#[derive(Args)]
struct AsympArgs {
    /// Preset name (i, ii, iii, iv) or a TOML/JSON scenario file
    scenario: String,
    /// Gauss-Hermite nodes for Normal covariates
    #[arg(long, default_value_t = ipw_att::oracle::DEFAULT_NODES)]
    nodes: usize,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ExportArgs {
    /// Report CSV written by `analyze`
    #[arg(long)]
    reports: PathBuf,
    #[arg(long, default_value = "se_ratio_histogram.csv")]
    histogram: PathBuf,
    #[arg(long, default_value = "top_k.csv")]
    top_k: PathBuf,
    #[arg(long, default_value_t = 40)]
    bins: usize,
    #[arg(long, default_value_t = 50)]
    k: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Corpus {
    Mixed,
    Null,
}

#[derive(Args)]
struct GenerateArgs {
    /// Single-outcome data from a preset or scenario file
    #[arg(long, conflicts_with = "corpus")]
    scenario: Option<String>,
    /// Multi-outcome synthetic corpus on scenario (i) units
    #[arg(long)]
    corpus: Option<Corpus>,
    #[arg(long, default_value_t = 100)]
    outcomes: usize,
    /// Upper bound of the per-outcome effect scale in a mixed corpus
    #[arg(long, default_value_t = 2.0)]
    effect_scale: f64,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 2021)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
}

fn scenario(arg: &str) -> Result<ScenarioSpec> {
    match ScenarioSpec::preset(arg) {
        Some(spec) => Ok(spec),
        None if Path::new(arg).exists() => ScenarioSpec::load(Path::new(arg)),
        None => Err(Error::InvalidScenario(format!(
            "'{arg}' is neither a preset (i, ii, iii, iv) nor a file"
        ))),
    }
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(args) => {
            let table = Table::from_path(&args.columns.input)?;
            // the fit never reads outcomes; the treatment column stands in
            let data = table.to_dataset(
                &args.columns.treatment,
                &args.columns.covariates,
                std::slice::from_ref(&args.columns.treatment),
            )?;
            let fit = fit_logistic(&data)?;
            let diag = weight_diagnostic(&fit.weights, data.treatment())?;
            println!("alpha        {:?}", fit.alpha);
            println!("iterations   {}", fit.iterations);
            println!("score norm   {:.3e}", fit.score_norm);
            println!("mean weight  {:.6}", diag.mean_weight);
            println!("2 * p1_hat   {:.6}", diag.expected_mean);
        }
        Command::Analyze(args) => {
            let table = Table::from_path(&args.columns.input)?;
            let outcomes = if args.outcomes.is_empty() {
                let used: Vec<&String> = args
                    .columns
                    .covariates
                    .iter()
                    .chain([&args.columns.treatment])
                    .collect();
                table.headers.iter().filter(|h| !used.contains(h)).cloned().collect()
            } else {
                args.outcomes
            };
            let data = table.to_dataset(&args.columns.treatment, &args.columns.covariates, &outcomes)?;
            let options = AnalysisOptions {
                ci_level: args.ci_level,
                jacobian: match args.jacobian {
                    Jacobian::Analytic => JacobianMethod::Analytic,
                    Jacobian::Numeric => JacobianMethod::FiniteDifference,
                },
            };
            let result = analyze(&data, &outcomes, &options)?;
            eprintln!(
                "mean weight {:.4} vs 2 * p1_hat {:.4} ({} outcomes)",
                result.diagnostic.mean_weight,
                result.diagnostic.expected_mean,
                result.reports.len()
            );
            write_reports_csv(sink(args.output.as_deref())?, &result.reports)?;
        }
        Command::Simulate(args) => {
            let mut plan = SimulationPlan::new(scenario(&args.scenario)?, args.n, args.replicates, args.seed);
            plan.ci_level = args.ci_level;
            let records = run_replicates(&plan)?;
            let true_att = ipw_att::oracle::population_moments(&plan.scenario)?.att;
            let summary = summarize(plan.n, true_att, &records);
            if let Some(path) = &args.replicates_csv {
                let mut w = csv::Writer::from_path(path)?;
                for r in &records {
                    w.serialize(r)?;
                }
                w.flush()?;
            }
            if let Some(path) = &args.csv {
                std::fs::write(path, summary.to_csv()?)?;
            }
            writeln!(sink(args.json.as_deref())?, "{}", summary.to_json()?)?;
        }
        Command::Asymp(args) => {
            let r = asymptotic_variance_with_nodes(&scenario(&args.scenario)?, args.nodes)?;
            if args.json {
                println!("{}", serde_json::to_string_pretty(&r)?);
            } else {
                println!("ATT       {:.7}", r.att);
                println!("p1        {:.7}", r.p1);
                println!("constant  {:.6}", r.constant);
                println!("Sigma*    {:.6}", r.sigma_star);
                println!("Sigma     {:.6}", r.sigma);
                println!("SD ratio  {:.4}", r.sd_ratio);
            }
        }
        Command::ExportPlots(args) => {
            let reports = read_reports_csv(File::open(&args.reports)?)?;
            let plot = export_plot_data(&reports, args.bins, args.k)?;
            plot.write_histogram(File::create(&args.histogram)?)?;
            plot.write_top_k(File::create(&args.top_k)?)?;
        }
        Command::Generate(args) => {
            let (data, outcome_names) = match (&args.scenario, args.corpus) {
                (Some(s), _) => (
                    generate_dataset(&scenario(s)?, args.n, args.seed)?,
                    vec!["Y".to_owned()],
                ),
                (None, corpus) => {
                    let spec = match corpus.unwrap_or(Corpus::Mixed) {
                        Corpus::Mixed => CorpusSpec::mixed(args.outcomes, args.effect_scale, args.seed),
                        Corpus::Null => CorpusSpec::null(args.outcomes),
                    };
                    (spec.generate(args.n, args.seed)?, spec.outcome_ids())
                }
            };
            let covariate_names: Vec<String> = if data.n_covariates() == 1 {
                vec!["L".into()]
            } else {
                (1..=data.n_covariates()).map(|j| format!("L{j}")).collect()
            };
            write_dataset_csv(File::create(&args.output)?, &data, &covariate_names, &outcome_names)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(u8::try_from(err.exit_code()).unwrap_or(1))
        }
    }
}
