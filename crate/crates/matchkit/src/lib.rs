//! matchkit builds matched treated/control samples from observational
//! cohorts and measures what the matching bought you.
//!
//! The pieces:
//!
//! - [`study`]: cohort model and CSV ingestion,
//! - [`distance`]: Mahalanobis and per-covariate caliper dissimilarities,
//! - [`logistic`]: IRLS logistic regression and propensity-score helpers,
//! - [`matchers`]: six matching algorithms over a shared result type,
//! - [`balance`]: standardized-difference diagnostics and Love-plot export,
//! - [`estimation`]: log-odds-ratio effect estimates on matched samples,
//! - [`simulation`]: a seeded, factorial Monte Carlo study engine,
//! - [`cli`]: the `matchkit` command-line pipeline (simulate, match,
//!   balance, estimate) with reproducibility manifests.
//!
//! Everything is deterministic given inputs and seeds; parallel execution
//! never changes results. See the crate examples for one runnable program
//! per capability.

pub mod balance;
pub mod cli;
pub mod distance;
pub mod error;
pub mod estimation;
pub mod logistic;
pub mod manifest;
pub mod matchers;
pub mod simulation;
pub mod study;

pub use error::{Error, Result};
pub use study::{load_csv, CovariateKind, CsvColumns, Study, SubjectView};

pub use distance::{
    caliper_dissimilarity, mahalanobis, pooled_covariance, CaliperSpec, MahalanobisContext,
};
pub use logistic::{fit_logistic, logit_caliper_width, propensity_logit, LogisticModel};
pub use matchers::{
    match_full, match_genetic, match_largest_caliper, match_nnwor, match_nnwr, match_optimal,
    unmatched, Cluster, GeneticConfig, MatchMethod, MatchResult,
};

pub use balance::{
    balance_report, standardized_difference_binary, standardized_difference_continuous,
    BalanceReport,
};
pub use estimation::{
    compute_metrics, estimate_log_or, mantel_haenszel_or, EffectEstimate, MethodMetrics,
};
pub use simulation::{run_scenario, CovariateDist, Scenario, ScenarioResult};
