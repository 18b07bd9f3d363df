//! Crate-wide error and cohort-validation types.

use thiserror::Error;

/// Anything a matchkit operation can fail with.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("column `{column}` not found in input")]
    MissingColumn { column: String },

    #[error("treatment column `{column}` has non-binary value `{value}` at data row {row}")]
    NonBinaryTreatment {
        column: String,
        row: usize,
        value: String,
    },

    #[error("outcome column `{column}` has non-binary value `{value}` at data row {row}")]
    NonBinaryOutcome {
        column: String,
        row: usize,
        value: String,
    },

    #[error("covariate `{column}` is not finite at data row {row}")]
    NonFiniteValue { column: String, row: usize },

    #[error("value `{value}` in column `{column}` at data row {row} does not parse as a number")]
    ParseValue {
        column: String,
        row: usize,
        value: String,
    },

    #[error("invalid study: {}", format_violations(.0))]
    InvalidStudy(Vec<Violation>),

    #[error("covariance matrix is singular (after regularization); raise the ridge term")]
    SingularCovariance,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("caliper width for `{name}` must be positive (got {value})")]
    InvalidCaliper { name: String, value: f64 },

    #[error("unknown covariate `{name}` in caliper file")]
    UnknownCovariate { name: String },

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("logistic model separated (a coefficient diverged); estimates are unreliable")]
    Separation,

    #[error("propensity logits are constant; the derived caliper width would be zero")]
    DegenerateCaliper,

    #[error("degenerate computation: {0}")]
    Degenerate(String),

    #[error("study has no outcome column; effect estimation needs one")]
    NoOutcome,

    #[error("match result has no clusters")]
    EmptyMatch,

    #[error("1:1 assignment infeasible: {treated} treated but only {controls} controls")]
    InfeasibleAssignment { treated: usize, controls: usize },

    #[error("every stratum is degenerate; no Mantel-Haenszel estimate exists")]
    AllDegenerateStrata,

    #[error("invalid genetic configuration: {0}")]
    InvalidGeneticConfig(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("could not draw a dataset with both groups after {attempts} attempts")]
    DegenerateDraw { attempts: usize },

    #[error("match file `{path}` is malformed: {detail}")]
    MatchFileFormat { path: String, detail: String },

    #[error("cohort digest mismatch: match file was produced from a different input ({expected} != {found})")]
    CohortDigestMismatch { expected: String, found: String },

    #[error("{0}")]
    Usage(String),
}

impl Error {
    /// Process exit code the CLI maps this error to.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::InfeasibleAssignment { .. } => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// A single cohort-invariant violation. `validate` reports all of them,
/// not just the first.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    TooFewSubjects { n: usize },
    NoCovariates,
    NoTreated,
    NoControls,
    InvalidTreatmentValue { row: usize, value: u8 },
    InvalidOutcomeValue { row: usize, value: u8 },
    NonFiniteCovariate { column: String, row: usize },
    NonBinaryDichotomous { column: String, row: usize, value: f64 },
    LengthMismatch { what: &'static str, expected: usize, got: usize },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::TooFewSubjects { n } => write!(f, "need at least 2 subjects, got {n}"),
            Violation::NoCovariates => write!(f, "need at least 1 covariate"),
            Violation::NoTreated => write!(f, "no treated subjects"),
            Violation::NoControls => write!(f, "no controls"),
            Violation::InvalidTreatmentValue { row, value } => {
                write!(f, "treatment at row {row} is {value}, expected 0 or 1")
            }
            Violation::InvalidOutcomeValue { row, value } => {
                write!(f, "outcome at row {row} is {value}, expected 0 or 1")
            }
            Violation::NonFiniteCovariate { column, row } => {
                write!(f, "covariate `{column}` at row {row} is not finite")
            }
            Violation::NonBinaryDichotomous { column, row, value } => {
                write!(
                    f,
                    "dichotomous covariate `{column}` at row {row} is {value}, expected 0 or 1"
                )
            }
            Violation::LengthMismatch {
                what,
                expected,
                got,
            } => write!(f, "{what} has length {got}, expected {expected}"),
        }
    }
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
