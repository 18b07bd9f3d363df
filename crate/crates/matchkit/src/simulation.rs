//! Seeded Monte Carlo engine: covariate generation under four
//! distributions, intercept calibration to target treatment prevalence and
//! baseline outcome incidence, and replicated method comparisons over the
//! full factorial scenario grid.

use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::distance::{pooled_covariance, CaliperSpec, DEFAULT_RIDGE};
use crate::error::{Error, Result};
use crate::estimation::{compute_metrics, estimate_log_or, MethodMetrics};
use crate::logistic::{logit_caliper_width, sigmoid};
use crate::matchers::{
    match_full, match_genetic, match_largest_caliper, match_nnwor, match_nnwr, match_optimal,
    unmatched, GeneticConfig, MatchMethod, MatchResult,
};
use crate::study::{CovariateKind, Study};

/// The four covariate distributions of the factorial design. Each draws
/// five covariates per subject.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CovariateDist {
    /// Five independent standard normals.
    IndepNormal,
    /// Multivariate normal, unit variances, pairwise correlation 0.25.
    MvNormal,
    /// Two Bernoulli(0.5) columns followed by three standard normals.
    TwoBinaryThreeNormal,
    /// Five independent Bernoulli(0.5).
    AllBinary,
}

pub const N_COVARIATES: usize = 5;
pub const MV_CORRELATION: f64 = 0.25;

impl CovariateDist {
    pub const ALL: [CovariateDist; 4] = [
        CovariateDist::IndepNormal,
        CovariateDist::MvNormal,
        CovariateDist::TwoBinaryThreeNormal,
        CovariateDist::AllBinary,
    ];

    pub fn token(&self) -> &'static str {
        match self {
            CovariateDist::IndepNormal => "indep-normal",
            CovariateDist::MvNormal => "mv-normal",
            CovariateDist::TwoBinaryThreeNormal => "two-binary-three-normal",
            CovariateDist::AllBinary => "all-binary",
        }
    }

    pub fn kinds(&self) -> [CovariateKind; N_COVARIATES] {
        match self {
            CovariateDist::IndepNormal | CovariateDist::MvNormal => {
                [CovariateKind::Continuous; N_COVARIATES]
            }
            CovariateDist::TwoBinaryThreeNormal => [
                CovariateKind::Dichotomous,
                CovariateKind::Dichotomous,
                CovariateKind::Continuous,
                CovariateKind::Continuous,
                CovariateKind::Continuous,
            ],
            CovariateDist::AllBinary => [CovariateKind::Dichotomous; N_COVARIATES],
        }
    }
}

impl std::fmt::Display for CovariateDist {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for CovariateDist {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "indep-normal" => Ok(CovariateDist::IndepNormal),
            "mv-normal" => Ok(CovariateDist::MvNormal),
            "two-binary-three-normal" => Ok(CovariateDist::TwoBinaryThreeNormal),
            "all-binary" => Ok(CovariateDist::AllBinary),
            other => Err(Error::Usage(format!(
                "unknown distribution `{other}` (expected indep-normal, mv-normal, two-binary-three-normal, all-binary)"
            ))),
        }
    }
}

/// The six treatment prevalence levels of the factorial design.
pub const PREVALENCE_GRID: [f64; 6] = [0.10, 0.15, 0.20, 0.25, 0.30, 0.35];

/// Log odds ratios of the five covariates in both generating models.
pub fn default_betas() -> [f64; N_COVARIATES] {
    [
        1.25f64.ln(),
        1.5f64.ln(),
        1.75f64.ln(),
        2.0f64.ln(),
        2.0f64.ln(),
    ]
}

/// One cell of the simulation design.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub dist: CovariateDist,
    /// Target fraction of treated subjects.
    pub prevalence: f64,
    /// Subjects per simulated dataset.
    pub n: usize,
    /// Conditional log odds ratio of treatment in the outcome model.
    pub tau: f64,
    /// Target outcome incidence with treatment switched off everywhere.
    pub baseline_incidence: f64,
    pub betas: [f64; N_COVARIATES],
    /// Draw size used when calibrating the two intercepts.
    pub calibration_n: usize,
}

pub const DEFAULT_CALIBRATION_N: usize = 2_000_000;

impl Scenario {
    pub fn new(dist: CovariateDist, prevalence: f64) -> Result<Self> {
        let scenario = Scenario {
            dist,
            prevalence,
            n: 5000,
            tau: 0.5,
            baseline_incidence: 0.10,
            betas: default_betas(),
            calibration_n: DEFAULT_CALIBRATION_N,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn with_baseline_incidence(mut self, incidence: f64) -> Self {
        self.baseline_incidence = incidence;
        self
    }

    pub fn with_calibration_n(mut self, calibration_n: usize) -> Self {
        self.calibration_n = calibration_n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.prevalence > 0.0 && self.prevalence < 1.0) {
            return Err(Error::InvalidScenario(format!(
                "prevalence must lie in (0,1), got {}",
                self.prevalence
            )));
        }
        if !(self.baseline_incidence > 0.0 && self.baseline_incidence < 1.0) {
            return Err(Error::InvalidScenario(format!(
                "baseline incidence must lie in (0,1), got {}",
                self.baseline_incidence
            )));
        }
        if self.n < 100 {
            return Err(Error::InvalidScenario(format!(
                "n must be at least 100 for stable calibration, got {}",
                self.n
            )));
        }
        if self.calibration_n < 100_000 {
            return Err(Error::InvalidScenario(format!(
                "calibration_n must be at least 100000, got {}",
                self.calibration_n
            )));
        }
        Ok(())
    }
}

/// Reserved RNG streams; replication r uses stream r.
pub mod streams {
    pub const CALIBRATE_TREATMENT: u64 = u64::MAX;
    pub const CALIBRATE_OUTCOME: u64 = u64::MAX - 1;
    /// Left free for independent verification draws.
    pub const CHECK: u64 = u64::MAX - 2;
}

/// ChaCha generator on a numbered stream of a seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// splitmix64; used to derive per-cell seeds for grid sweeps.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Equicorrelation Cholesky factor row for MvNormal draws: the first
/// column is a, the diagonal entries b(i), zeros above.
fn mv_cholesky() -> [[f64; N_COVARIATES]; N_COVARIATES] {
    let sigma = {
        let mut m = [[MV_CORRELATION; N_COVARIATES]; N_COVARIATES];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        m
    };
    let mut l = [[0.0f64; N_COVARIATES]; N_COVARIATES];
    for i in 0..N_COVARIATES {
        for j in 0..=i {
            let mut sum = sigma[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                l[i][j] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    l
}

fn draw_row(dist: CovariateDist, l: &[[f64; N_COVARIATES]; N_COVARIATES], rng: &mut ChaCha8Rng) -> [f64; N_COVARIATES] {
    let mut row = [0.0f64; N_COVARIATES];
    match dist {
        CovariateDist::IndepNormal => {
            for slot in &mut row {
                *slot = StandardNormal.sample(rng);
            }
        }
        CovariateDist::MvNormal => {
            let mut z = [0.0f64; N_COVARIATES];
            for slot in &mut z {
                *slot = StandardNormal.sample(rng);
            }
            for i in 0..N_COVARIATES {
                let mut acc = 0.0;
                for j in 0..=i {
                    acc += l[i][j] * z[j];
                }
                row[i] = acc;
            }
        }
        CovariateDist::TwoBinaryThreeNormal => {
            for slot in row.iter_mut().take(2) {
                *slot = f64::from(u8::from(rng.random_bool(0.5)));
            }
            for slot in row.iter_mut().skip(2) {
                *slot = StandardNormal.sample(rng);
            }
        }
        CovariateDist::AllBinary => {
            for slot in &mut row {
                *slot = f64::from(u8::from(rng.random_bool(0.5)));
            }
        }
    }
    row
}

/// Draws an n x 5 covariate matrix (row-major) from the named distribution.
pub fn generate_covariates(dist: CovariateDist, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let l = mv_cholesky();
    let mut data = Vec::with_capacity(n * N_COVARIATES);
    for _ in 0..n {
        data.extend_from_slice(&draw_row(dist, &l, rng));
    }
    data
}

/// Streams `calibration_n` draws of the linear combination `betas . x`.
fn linear_predictor_sample(
    dist: CovariateDist,
    betas: &[f64; N_COVARIATES],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let l = mv_cholesky();
    (0..n)
        .map(|_| {
            let row = draw_row(dist, &l, rng);
            betas.iter().zip(row.iter()).map(|(b, x)| b * x).sum()
        })
        .collect()
}

/// Mean of sigmoid(intercept + s) over a sample, with a fixed chunked
/// reduction order so results do not depend on thread count.
fn mean_sigmoid(sample: &[f64], intercept: f64) -> f64 {
    let chunk_sums: Vec<f64> = sample
        .par_chunks(65_536)
        .map(|chunk| chunk.iter().map(|&s| sigmoid(intercept + s)).sum::<f64>())
        .collect();
    chunk_sums.iter().sum::<f64>() / sample.len() as f64
}

/// Bisection for the intercept that drives `mean sigmoid(b0 + s)` to
/// `target` over the sample. The mean is strictly increasing in b0, so the
/// bracket [-20, 20] always closes.
fn bisect_intercept(sample: &[f64], target: f64) -> f64 {
    let (mut lo, mut hi) = (-20.0f64, 20.0f64);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        let value = mean_sigmoid(sample, mid);
        if (value - target).abs() < 1e-6 || (hi - lo) < 1e-12 {
            return mid;
        }
        if value < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Intercept of the treatment model such that the mean treatment
/// probability over a fresh calibration draw hits the scenario prevalence.
pub fn calibrate_treatment_intercept(
    scenario: &Scenario,
    rng: &mut ChaCha8Rng,
    calibration_n: usize,
) -> f64 {
    let sample = linear_predictor_sample(scenario.dist, &scenario.betas, calibration_n, rng);
    bisect_intercept(&sample, scenario.prevalence)
}

/// Intercept of the outcome model such that the mean outcome probability
/// with treatment off everywhere hits the baseline incidence.
pub fn calibrate_outcome_intercept(
    scenario: &Scenario,
    rng: &mut ChaCha8Rng,
    calibration_n: usize,
) -> f64 {
    let sample = linear_predictor_sample(scenario.dist, &scenario.betas, calibration_n, rng);
    bisect_intercept(&sample, scenario.baseline_incidence)
}

/// Draws one complete dataset under the scenario's generating models.
/// Degenerate draws (all treated or all control) are redrawn from the
/// advanced stream; the count of redraws is returned alongside.
pub fn simulate_dataset(
    scenario: &Scenario,
    intercepts: (f64, f64),
    rng: &mut ChaCha8Rng,
) -> Result<(Study, u32)> {
    let (beta0_t, beta0_o) = intercepts;
    let l = mv_cholesky();
    let kinds = scenario.dist.kinds();
    let names: Vec<String> = (1..=N_COVARIATES).map(|i| format!("x{i}")).collect();
    let mut redraws = 0u32;
    loop {
        let mut data = Vec::with_capacity(scenario.n * N_COVARIATES);
        let mut treatment = Vec::with_capacity(scenario.n);
        let mut outcome = Vec::with_capacity(scenario.n);
        for _ in 0..scenario.n {
            let row = draw_row(scenario.dist, &l, rng);
            let effect: f64 = scenario
                .betas
                .iter()
                .zip(row.iter())
                .map(|(b, x)| b * x)
                .sum();
            let z = u8::from(rng.random_bool(sigmoid(beta0_t + effect)));
            let tau_term = if z == 1 { scenario.tau } else { 0.0 };
            let y = u8::from(rng.random_bool(sigmoid(beta0_o + tau_term + effect)));
            data.extend_from_slice(&row);
            treatment.push(z);
            outcome.push(y);
        }
        let any_treated = treatment.iter().any(|&z| z == 1);
        let any_control = treatment.iter().any(|&z| z == 0);
        if any_treated && any_control {
            let study = Study::new(
                data,
                names.clone(),
                kinds.to_vec(),
                treatment,
                Some(outcome),
            )?;
            return Ok((study, redraws));
        }
        redraws += 1;
        if redraws >= 1000 {
            return Err(Error::DegenerateDraw {
                attempts: redraws as usize,
            });
        }
    }
}

/// Default largest-caliper widths inside the simulation: half a pooled
/// standard deviation for continuous covariates, a full unit for binary
/// ones. Exposed so callers can reproduce or replace the rule.
pub fn simulation_calipers(study: &Study) -> Result<CaliperSpec> {
    let n = study.n_subjects() as f64;
    let p = study.n_covariates();
    let mut widths = Vec::with_capacity(p);
    for col in 0..p {
        match study.covariate_kinds()[col] {
            CovariateKind::Dichotomous => widths.push(1.0),
            CovariateKind::Continuous => {
                let mean = (0..study.n_subjects())
                    .map(|i| study.value(i, col))
                    .sum::<f64>()
                    / n;
                let var = (0..study.n_subjects())
                    .map(|i| (study.value(i, col) - mean).powi(2))
                    .sum::<f64>()
                    / (n - 1.0);
                let sd = var.sqrt();
                widths.push(if sd > 0.0 { 0.5 * sd } else { f64::INFINITY });
            }
        }
    }
    CaliperSpec::new(widths)
}

/// Full matching defaults used by the engine.
pub const FULL_MATCH_RATIO: usize = 3;
pub const FULL_MATCH_CALIPER_MULTIPLIER: f64 = 0.2;

/// Runs one method on one dataset and returns its match.
pub fn run_method(study: &Study, method: MatchMethod, rep_seed: u64) -> Result<MatchResult> {
    match method {
        MatchMethod::Unmatched => Ok(unmatched(study)),
        MatchMethod::Nnwr => {
            let ctx = pooled_covariance(study, DEFAULT_RIDGE)?;
            match_nnwr(study, &ctx)
        }
        MatchMethod::Nnwor => {
            let ctx = pooled_covariance(study, DEFAULT_RIDGE)?;
            match_nnwor(study, &ctx)
        }
        MatchMethod::Optimal => {
            let ctx = pooled_covariance(study, DEFAULT_RIDGE)?;
            match_optimal(study, &ctx)
        }
        MatchMethod::Full => {
            let ctx = pooled_covariance(study, DEFAULT_RIDGE)?;
            let width = logit_caliper_width(study, FULL_MATCH_CALIPER_MULTIPLIER)?;
            match_full(study, &ctx, FULL_MATCH_RATIO, width)
        }
        MatchMethod::Genetic => {
            let config = GeneticConfig {
                seed: rep_seed,
                ..GeneticConfig::default()
            };
            match_genetic(study, &config)
        }
        MatchMethod::LargestCaliper => {
            let calipers = simulation_calipers(study)?;
            match_largest_caliper(study, &calipers)
        }
    }
}

/// Per-method aggregate over replications.
#[derive(Debug, Clone)]
pub struct MethodSummary {
    pub method: MatchMethod,
    pub metrics: Option<MethodMetrics>,
    /// Replications dropped for this method, with the first error message.
    pub failures: usize,
    pub first_failure: Option<String>,
}

/// Everything produced by a scenario run.
#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub scenario: Scenario,
    pub seed: u64,
    pub n_reps: usize,
    pub beta0_treatment: f64,
    pub beta0_outcome: f64,
    pub per_method: Vec<MethodSummary>,
    pub degenerate_redraws: u32,
    /// Raw estimates per method, ordered by replication (NaN = failed).
    pub estimates: Vec<(MatchMethod, Vec<f64>)>,
}

/// Calibrates once, then replicates: draw dataset, run every method,
/// estimate the log odds ratio, and aggregate.
///
/// Replication r draws from stream r of the seed, so results are identical
/// whatever the parallelism; `parallelism` only sizes the worker pool
/// (None = rayon default).
pub fn run_scenario(
    scenario: &Scenario,
    methods: &[MatchMethod],
    n_reps: usize,
    seed: u64,
    parallelism: Option<usize>,
) -> Result<ScenarioResult> {
    scenario.validate()?;
    if methods.is_empty() {
        return Err(Error::Usage("no methods requested".to_string()));
    }

    let beta0_t = calibrate_treatment_intercept(
        scenario,
        &mut stream_rng(seed, streams::CALIBRATE_TREATMENT),
        scenario.calibration_n,
    );
    let beta0_o = calibrate_outcome_intercept(
        scenario,
        &mut stream_rng(seed, streams::CALIBRATE_OUTCOME),
        scenario.calibration_n,
    );

    let run_reps = || -> Vec<Result<(Vec<Result<f64>>, u32)>> {
        (0..n_reps)
            .into_par_iter()
            .map(|rep| {
                let mut rng = stream_rng(seed, rep as u64);
                let (study, redraws) = simulate_dataset(scenario, (beta0_t, beta0_o), &mut rng)?;
                let rep_seed = derive_seed(seed, rep as u64);
                let estimates: Vec<Result<f64>> = methods
                    .iter()
                    .map(|&method| {
                        let matched = run_method(&study, method, rep_seed)?;
                        let estimate = estimate_log_or(&study, &matched)?;
                        Ok(estimate.log_odds_ratio)
                    })
                    .collect();
                Ok((estimates, redraws))
            })
            .collect()
    };

    let outcomes = match parallelism {
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Usage(format!("thread pool: {e}")))?
            .install(run_reps),
        None => run_reps(),
    };

    let mut per_method: Vec<MethodSummary> = methods
        .iter()
        .map(|&method| MethodSummary {
            method,
            metrics: None,
            failures: 0,
            first_failure: None,
        })
        .collect();
    let mut estimates: Vec<(MatchMethod, Vec<f64>)> = methods
        .iter()
        .map(|&m| (m, Vec::with_capacity(n_reps)))
        .collect();
    let mut degenerate_redraws = 0u32;

    for outcome in outcomes {
        let (rep_estimates, redraws) = outcome?;
        degenerate_redraws += redraws;
        for (k, value) in rep_estimates.into_iter().enumerate() {
            match value {
                Ok(tau_hat) if tau_hat.is_finite() => estimates[k].1.push(tau_hat),
                Ok(_) => {
                    per_method[k].failures += 1;
                    per_method[k]
                        .first_failure
                        .get_or_insert_with(|| "non-finite estimate".to_string());
                    estimates[k].1.push(f64::NAN);
                }
                Err(err) => {
                    per_method[k].failures += 1;
                    per_method[k]
                        .first_failure
                        .get_or_insert_with(|| err.to_string());
                    estimates[k].1.push(f64::NAN);
                }
            }
        }
    }

    for (summary, (_, values)) in per_method.iter_mut().zip(estimates.iter()) {
        let ok: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        if ok.len() >= 2 {
            summary.metrics = Some(compute_metrics(&ok, scenario.tau));
        }
    }

    Ok(ScenarioResult {
        scenario: scenario.clone(),
        seed,
        n_reps,
        beta0_treatment: beta0_t,
        beta0_outcome: beta0_o,
        per_method,
        degenerate_redraws,
        estimates,
    })
}

/// Writes scenario results as CSV, one row per (scenario, method):
/// dist, prevalence, method, bias, sd, rmse, n_reps, failures.
pub fn write_scenario_csv(path: &Path, results: &[ScenarioResult]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record([
        "dist",
        "prevalence",
        "method",
        "bias",
        "sd",
        "rmse",
        "n_reps",
        "failures",
    ])?;
    for result in results {
        for summary in &result.per_method {
            let (bias, sd, rmse) = match &summary.metrics {
                Some(m) => (format!("{}", m.bias), format!("{}", m.empirical_sd), format!("{}", m.rmse)),
                None => ("NA".into(), "NA".into(), "NA".into()),
            };
            writer.write_record([
                result.scenario.dist.token().to_string(),
                format!("{}", result.scenario.prevalence),
                summary.method.token().to_string(),
                bias,
                sd,
                rmse,
                format!("{}", result.n_reps),
                format!("{}", summary.failures),
            ])?;
        }
    }
    writer.flush()?;
    Ok(())
}
