//! The `matchkit` command-line pipeline.
//!
//! Four file-based commands compose into reproducible workflows:
//! `simulate` runs the Monte Carlo engine, `match` builds a matched sample
//! from a cohort CSV, `balance` audits covariate balance over one or more
//! match files, and `estimate` produces the effect table. Every output
//! gets a sibling `.manifest.json` with input digests so downstream
//! commands refuse to mix cohorts.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::balance::{balance_report, love_plot_rows, write_love_plot_csv, write_love_plot_svg};
use crate::distance::{pooled_covariance, read_caliper_file, CaliperSpec};
use crate::error::{Error, Result};
use crate::estimation::{estimate_log_or, write_effect_table};
use crate::logistic::{logit_caliper_width, propensity_logits};
use crate::manifest::{file_digest, manifest_path, RunManifest};
use crate::matchers::{
    match_full, match_genetic, match_largest_caliper, match_nnwor, match_nnwor_by, match_nnwr,
    match_optimal, unmatched, GeneticConfig, MatchMethod, MatchResult,
};
use crate::simulation::{
    derive_seed, run_scenario, simulation_calipers, write_scenario_csv, CovariateDist, Scenario,
    ScenarioResult, DEFAULT_CALIBRATION_N, PREVALENCE_GRID,
};
use crate::study::{load_csv, CsvColumns, Study};

#[derive(Parser)]
#[command(
    name = "matchkit",
    version,
    about = "Matched-sampling toolkit: matching, balance audit, effect estimation, simulation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Run Monte Carlo scenarios and write per-method metric tables
    Simulate(SimulateArgs),
    /// Match a cohort CSV and write the cluster file
    Match(MatchArgs),
    /// Standardized-difference audit over one or more match files
    Balance(BalanceArgs),
    /// Odds-ratio effect table over one or more match files
    Estimate(EstimateArgs),
}

#[derive(Args, Serialize, Clone)]
pub struct CohortArgs {
    /// Cohort CSV with a header row
    #[arg(long)]
    pub input: PathBuf,
    /// Name of the 0/1 treatment column
    #[arg(long)]
    pub treatment_col: String,
    /// Name of the 0/1 outcome column
    #[arg(long)]
    pub outcome_col: Option<String>,
    /// Comma-separated covariate column names
    #[arg(long, value_delimiter = ',', required = true)]
    pub covariate_cols: Vec<String>,
    /// Covariates to treat as continuous even when all values are 0/1
    #[arg(long, value_delimiter = ',')]
    pub continuous: Vec<String>,
}

impl CohortArgs {
    fn load(&self) -> Result<Study> {
        let columns = CsvColumns {
            treatment: self.treatment_col.clone(),
            outcome: self.outcome_col.clone(),
            covariates: self.covariate_cols.clone(),
            force_continuous: self.continuous.clone(),
        };
        load_csv(&self.input, &columns)
    }
}

#[derive(Args, Serialize)]
pub struct SimulateArgs {
    /// Covariate distribution (indep-normal, mv-normal,
    /// two-binary-three-normal, all-binary)
    #[arg(long, required_unless_present = "grid", conflicts_with = "grid")]
    pub dist: Option<String>,
    /// Target treatment prevalence in (0,1)
    #[arg(long, required_unless_present = "grid", conflicts_with = "grid")]
    pub prevalence: Option<f64>,
    /// Sweep the full 4 x 6 factorial grid instead
    #[arg(long)]
    pub grid: bool,
    /// Subjects per replication
    #[arg(long, default_value_t = 5000)]
    pub n: usize,
    /// Replications per scenario
    #[arg(long, default_value_t = 200)]
    pub reps: usize,
    /// Comma-separated methods (unmatched, nnwr, nnwor, opt, full, gm, lc)
    #[arg(long, value_delimiter = ',', required = true)]
    pub methods: Vec<String>,
    /// Conditional log odds ratio of treatment in the outcome model
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    /// Outcome incidence with treatment off everywhere
    #[arg(long, default_value_t = 0.10)]
    pub baseline_incidence: f64,
    /// Draw size for intercept calibration
    #[arg(long, default_value_t = DEFAULT_CALIBRATION_N)]
    pub calibration_n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV path
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads for replications (default: all cores)
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args, Serialize)]
pub struct MatchArgs {
    #[command(flatten)]
    pub cohort: CohortArgs,
    /// Matching method (unmatched, nnwr, nnwor, opt, full, gm, lc)
    #[arg(long)]
    pub method: String,
    /// Caliper file for lc (name = width, `inf` allowed); defaults to
    /// 0.5 SD for continuous covariates and 1 for dichotomous ones
    #[arg(long)]
    pub calipers: Option<PathBuf>,
    /// Ridge added to the covariance diagonal before inversion
    #[arg(long, default_value_t = crate::distance::DEFAULT_RIDGE)]
    pub ridge: f64,
    /// Controls per treated subject for full matching
    #[arg(long, default_value_t = 3)]
    pub max_ratio: usize,
    /// Propensity-logit caliper multiplier for full matching
    #[arg(long, default_value_t = 0.2)]
    pub caliper_multiplier: f64,
    /// Process greedy (nnwor) treated units by descending propensity logit
    #[arg(long)]
    pub by_propensity: bool,
    /// Population size for the genetic search
    #[arg(long, default_value_t = 16)]
    pub population: usize,
    /// Generations for the genetic search
    #[arg(long, default_value_t = 10)]
    pub generations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output match CSV path
    #[arg(long)]
    pub out: PathBuf,
    /// Accepted for interface uniformity; matching is single-threaded
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args, Serialize)]
pub struct BalanceArgs {
    #[command(flatten)]
    pub cohort: CohortArgs,
    /// Match CSV files produced by `matchkit match` (repeatable)
    #[arg(long = "match", required = true)]
    pub match_files: Vec<PathBuf>,
    /// |d| threshold for the imbalance count
    #[arg(long, default_value_t = crate::balance::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output Love-plot CSV path
    #[arg(long)]
    pub out: PathBuf,
    /// Also render the Love plot as SVG
    #[arg(long)]
    pub svg: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args, Serialize)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub cohort: CohortArgs,
    /// Match CSV files produced by `matchkit match` (repeatable)
    #[arg(long = "match", required = true)]
    pub match_files: Vec<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output effect-table CSV path
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Parses, dispatches, and maps errors to exit codes
/// (0 ok, 2 usage, 3 data, 4 infeasible).
pub fn run() -> i32 {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Match(args) => cmd_match(&args),
        Command::Balance(args) => cmd_balance(&args),
        Command::Estimate(args) => cmd_estimate(&args),
    };
    match result {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

fn parse_methods(tokens: &[String]) -> Result<Vec<MatchMethod>> {
    let mut methods = Vec::new();
    for token in tokens {
        let method: MatchMethod = token.parse()?;
        if !methods.contains(&method) {
            methods.push(method);
        }
    }
    Ok(methods)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let methods = parse_methods(&args.methods)?;
    let mut scenarios: Vec<(Scenario, u64)> = Vec::new();
    if args.grid {
        let mut cell = 0u64;
        for dist in CovariateDist::ALL {
            for prevalence in PREVALENCE_GRID {
                scenarios.push((build_scenario(args, dist, prevalence)?, derive_seed(args.seed, cell)));
                cell += 1;
            }
        }
    } else {
        let dist: CovariateDist = args.dist.as_deref().unwrap().parse()?;
        let prevalence = args.prevalence.unwrap();
        scenarios.push((build_scenario(args, dist, prevalence)?, args.seed));
    }

    let mut results: Vec<ScenarioResult> = Vec::with_capacity(scenarios.len());
    for (scenario, seed) in &scenarios {
        let result = run_scenario(scenario, &methods, args.reps, *seed, args.threads)?;
        for summary in &result.per_method {
            let line = match &summary.metrics {
                Some(m) => format!(
                    "bias {:+.4}  sd {:.4}  rmse {:.4}  failures {}",
                    m.bias, m.empirical_sd, m.rmse, summary.failures
                ),
                None => format!("no usable replications (failures {})", summary.failures),
            };
            println!(
                "{} prevalence {:.2} {:<9} {}",
                scenario.dist.token(),
                scenario.prevalence,
                summary.method.token(),
                line
            );
        }
        results.push(result);
    }

    write_scenario_csv(&args.out, &results)?;
    let manifest = RunManifest::begin(
        "simulate",
        serde_json::to_value(args).expect("args serialize"),
        args.seed,
    );
    manifest.finish(&args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn build_scenario(args: &SimulateArgs, dist: CovariateDist, prevalence: f64) -> Result<Scenario> {
    Ok(Scenario::new(dist, prevalence)?
        .with_n(args.n)
        .with_tau(args.tau)
        .with_baseline_incidence(args.baseline_incidence)
        .with_calibration_n(args.calibration_n))
}

pub fn cmd_match(args: &MatchArgs) -> Result<()> {
    let study = args.cohort.load()?;
    let method: MatchMethod = args.method.parse()?;

    let result = match method {
        MatchMethod::Unmatched => unmatched(&study),
        MatchMethod::Nnwr => {
            let ctx = pooled_covariance(&study, args.ridge)?;
            match_nnwr(&study, &ctx)?
        }
        MatchMethod::Nnwor => {
            let ctx = pooled_covariance(&study, args.ridge)?;
            if args.by_propensity {
                let logits = propensity_logits(&study)?;
                let mut order = study.treated_indices();
                order.sort_by(|&a, &b| {
                    logits[b].partial_cmp(&logits[a]).unwrap().then(a.cmp(&b))
                });
                match_nnwor_by(&study, &ctx, &order)?
            } else {
                match_nnwor(&study, &ctx)?
            }
        }
        MatchMethod::Optimal => {
            let ctx = pooled_covariance(&study, args.ridge)?;
            match_optimal(&study, &ctx)?
        }
        MatchMethod::Full => {
            let ctx = pooled_covariance(&study, args.ridge)?;
            let width = logit_caliper_width(&study, args.caliper_multiplier)?;
            match_full(&study, &ctx, args.max_ratio, width)?
        }
        MatchMethod::Genetic => {
            let config = GeneticConfig {
                population_size: args.population,
                generations: args.generations,
                seed: args.seed,
                ..GeneticConfig::default()
            };
            match_genetic(&study, &config)?
        }
        MatchMethod::LargestCaliper => {
            let calipers: CaliperSpec = match &args.calipers {
                Some(path) => read_caliper_file(path, study.covariate_names())?,
                None => {
                    eprintln!("note: no caliper file; using 0.5 SD (continuous) / 1 (binary)");
                    simulation_calipers(&study)?
                }
            };
            match_largest_caliper(&study, &calipers)?
        }
    };

    result.write_csv(&args.out)?;
    let mut manifest = RunManifest::begin(
        "match",
        serde_json::to_value(args).expect("args serialize"),
        args.seed,
    );
    manifest.record_input("cohort", &args.cohort.input)?;
    if let Some(calipers) = &args.calipers {
        manifest.record_input("calipers", calipers)?;
    }
    manifest.finish(&args.out)?;

    println!(
        "method {}: {} clusters, {} treated matched / {} discarded, {} controls matched / {} discarded",
        method.token(),
        result.n_clusters(),
        study.n_treated() - result.discarded_treated.len(),
        result.discarded_treated.len(),
        study.n_controls() - result.discarded_controls.len(),
        result.discarded_controls.len(),
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

/// Reads a match file, checking its manifest's cohort digest against the
/// cohort actually supplied. Returns the method label for output rows.
fn load_match_checked(path: &Path, cohort: &Path) -> Result<(String, MatchResult)> {
    let manifest_file = manifest_path(path);
    let mut label = path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "match".to_string());
    let mut method = MatchMethod::Unmatched;
    if manifest_file.exists() {
        let manifest = RunManifest::load(&manifest_file)?;
        if let Some(recorded) = manifest.input_digest("cohort") {
            let actual = file_digest(cohort)?;
            if recorded != actual {
                return Err(Error::CohortDigestMismatch {
                    expected: recorded.to_string(),
                    found: actual,
                });
            }
        }
        if let Some(token) = manifest.args.get("method").and_then(|v| v.as_str()) {
            if let Ok(parsed) = token.parse::<MatchMethod>() {
                method = parsed;
                label = parsed.token().to_string();
            }
        }
    }
    let result = MatchResult::from_csv(path, method)?;
    Ok((label, result))
}

pub fn cmd_balance(args: &BalanceArgs) -> Result<()> {
    let study = args.cohort.load()?;
    let mut reports = Vec::new();
    for path in &args.match_files {
        let (label, result) = load_match_checked(path, &args.cohort.input)?;
        let report = balance_report(&study, &result, args.threshold)?;
        println!(
            "{label}: {} of {} covariates with |d| > {} before matching, {} after",
            report.n_unmatched_exceeding,
            report.records.len(),
            args.threshold,
            report.n_matched_exceeding,
        );
        reports.push((label, report));
    }

    let rows = love_plot_rows(&reports);
    write_love_plot_csv(&args.out, &rows)?;
    if let Some(svg) = &args.svg {
        write_love_plot_svg(svg, &rows, args.threshold)?;
    }

    let mut manifest = RunManifest::begin(
        "balance",
        serde_json::to_value(args).expect("args serialize"),
        args.seed,
    );
    manifest.record_input("cohort", &args.cohort.input)?;
    for (k, path) in args.match_files.iter().enumerate() {
        manifest.record_input(&format!("match:{k}"), path)?;
    }
    manifest.finish(&args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

pub fn cmd_estimate(args: &EstimateArgs) -> Result<()> {
    if args.cohort.outcome_col.is_none() {
        return Err(Error::NoOutcome);
    }
    let study = args.cohort.load()?;

    let mut rows = Vec::new();
    let baseline = estimate_log_or(&study, &unmatched(&study))?;
    rows.push(("unmatched".to_string(), baseline));
    for path in &args.match_files {
        let (label, result) = load_match_checked(path, &args.cohort.input)?;
        let estimate = estimate_log_or(&study, &result)?;
        rows.push((label, estimate));
    }

    for (label, estimate) in &rows {
        println!(
            "{label:<12} OR {:.3}  95% CI [{:.3}, {:.3}]  n_eff {}",
            estimate.odds_ratio, estimate.ci_low, estimate.ci_high, estimate.n_effective
        );
    }

    write_effect_table(&args.out, &rows)?;
    let mut manifest = RunManifest::begin(
        "estimate",
        serde_json::to_value(args).expect("args serialize"),
        args.seed,
    );
    manifest.record_input("cohort", &args.cohort.input)?;
    for (k, path) in args.match_files.iter().enumerate() {
        manifest.record_input(&format!("match:{k}"), path)?;
    }
    manifest.finish(&args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}
