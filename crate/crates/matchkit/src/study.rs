//! Cohort data model: covariate matrix, treatment indicator, optional binary
//! outcome, plus CSV ingestion and validation.
//!
//! A [`Study`] is immutable after construction and safe to share across
//! threads; every other module consumes read-only views of it.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result, Violation};

/// How a covariate column is treated by balance diagnostics and default
/// caliper rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovariateKind {
    Continuous,
    Dichotomous,
}

/// An immutable cohort: n subjects, P covariates, a 0/1 treatment indicator
/// and an optional 0/1 outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Study {
    /// Row-major n x P covariate values.
    data: Vec<f64>,
    n: usize,
    p: usize,
    treatment: Vec<u8>,
    outcome: Option<Vec<u8>>,
    covariate_names: Vec<String>,
    covariate_kinds: Vec<CovariateKind>,
}

/// Borrowed view of one subject's covariate row.
#[derive(Debug, Clone, Copy)]
pub struct SubjectView<'a> {
    pub index: usize,
    pub row: &'a [f64],
}

impl Study {
    /// Builds a validated study. Returns every invariant violation at once
    /// if the parts are inconsistent.
    pub fn new(
        covariates: Vec<f64>,
        covariate_names: Vec<String>,
        covariate_kinds: Vec<CovariateKind>,
        treatment: Vec<u8>,
        outcome: Option<Vec<u8>>,
    ) -> Result<Self> {
        let study = Self::from_parts_unchecked(
            covariates,
            covariate_names,
            covariate_kinds,
            treatment,
            outcome,
        );
        let violations = study.validate();
        if violations.is_empty() {
            Ok(study)
        } else {
            Err(Error::InvalidStudy(violations))
        }
    }

    /// Assembles a study without running validation. Intended for callers
    /// that want to inspect violations via [`Study::validate`].
    pub fn from_parts_unchecked(
        covariates: Vec<f64>,
        covariate_names: Vec<String>,
        covariate_kinds: Vec<CovariateKind>,
        treatment: Vec<u8>,
        outcome: Option<Vec<u8>>,
    ) -> Self {
        let n = treatment.len();
        let p = covariate_names.len();
        Study {
            data: covariates,
            n,
            p,
            treatment,
            outcome,
            covariate_names,
            covariate_kinds,
        }
    }

    /// Checks every cohort invariant and returns all violations found.
    pub fn validate(&self) -> Vec<Violation> {
        let mut violations = Vec::new();
        if self.n < 2 {
            violations.push(Violation::TooFewSubjects { n: self.n });
        }
        if self.p == 0 {
            violations.push(Violation::NoCovariates);
        }
        if self.data.len() != self.n * self.p {
            violations.push(Violation::LengthMismatch {
                what: "covariate matrix",
                expected: self.n * self.p,
                got: self.data.len(),
            });
            // Cell-level checks below would index out of bounds.
            return violations;
        }
        if self.covariate_kinds.len() != self.p {
            violations.push(Violation::LengthMismatch {
                what: "covariate kinds",
                expected: self.p,
                got: self.covariate_kinds.len(),
            });
            return violations;
        }
        if let Some(outcome) = &self.outcome {
            if outcome.len() != self.n {
                violations.push(Violation::LengthMismatch {
                    what: "outcome",
                    expected: self.n,
                    got: outcome.len(),
                });
            } else {
                for (row, &value) in outcome.iter().enumerate() {
                    if value > 1 {
                        violations.push(Violation::InvalidOutcomeValue { row, value });
                    }
                }
            }
        }
        let mut any_treated = false;
        let mut any_control = false;
        for (row, &z) in self.treatment.iter().enumerate() {
            match z {
                0 => any_control = true,
                1 => any_treated = true,
                value => violations.push(Violation::InvalidTreatmentValue { row, value }),
            }
        }
        if !any_treated {
            violations.push(Violation::NoTreated);
        }
        if !any_control {
            violations.push(Violation::NoControls);
        }
        for row in 0..self.n {
            for col in 0..self.p {
                let value = self.data[row * self.p + col];
                if !value.is_finite() {
                    violations.push(Violation::NonFiniteCovariate {
                        column: self.covariate_names[col].clone(),
                        row,
                    });
                } else if self.covariate_kinds[col] == CovariateKind::Dichotomous
                    && value != 0.0
                    && value != 1.0
                {
                    violations.push(Violation::NonBinaryDichotomous {
                        column: self.covariate_names[col].clone(),
                        row,
                        value,
                    });
                }
            }
        }
        violations
    }

    pub fn n_subjects(&self) -> usize {
        self.n
    }

    pub fn n_covariates(&self) -> usize {
        self.p
    }

    /// Covariate row of subject `i`.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }

    pub fn subject(&self, i: usize) -> SubjectView<'_> {
        SubjectView {
            index: i,
            row: self.row(i),
        }
    }

    pub fn value(&self, i: usize, col: usize) -> f64 {
        self.data[i * self.p + col]
    }

    pub fn is_treated(&self, i: usize) -> bool {
        self.treatment[i] == 1
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn outcome(&self) -> Option<&[u8]> {
        self.outcome.as_deref()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn covariate_kinds(&self) -> &[CovariateKind] {
        &self.covariate_kinds
    }

    pub fn treated_indices(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| self.treatment[i] == 1).collect()
    }

    pub fn control_indices(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| self.treatment[i] == 0).collect()
    }

    pub fn n_treated(&self) -> usize {
        self.treatment.iter().filter(|&&z| z == 1).count()
    }

    pub fn n_controls(&self) -> usize {
        self.n - self.n_treated()
    }

    /// Writes the study back out as CSV: covariate columns (by name), then
    /// `treatment`, then `outcome` when present. Round-trips through
    /// [`load_csv`] bit-exactly.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = self.covariate_names.clone();
        header.push("treatment".to_string());
        if self.outcome.is_some() {
            header.push("outcome".to_string());
        }
        writer.write_record(&header)?;
        for i in 0..self.n {
            let mut record: Vec<String> = self.row(i).iter().map(|v| format!("{v}")).collect();
            record.push(format!("{}", self.treatment[i]));
            if let Some(outcome) = &self.outcome {
                record.push(format!("{}", outcome[i]));
            }
            writer.write_record(&record)?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Column selection for CSV ingestion.
#[derive(Debug, Clone, Default)]
pub struct CsvColumns {
    pub treatment: String,
    pub outcome: Option<String>,
    pub covariates: Vec<String>,
    /// Columns to keep continuous even when their value set is {0,1}.
    pub force_continuous: Vec<String>,
}

/// Loads a cohort from a headered CSV file.
///
/// Column kinds are auto-detected: a covariate whose values all lie in
/// {0,1} is tagged dichotomous unless listed in `force_continuous`.
/// Missing values are rejected, not imputed.
pub fn load_csv(path: &Path, columns: &CsvColumns) -> Result<Study> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header = reader.headers()?.clone();
    let position = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                column: name.to_string(),
            })
    };

    let treatment_idx = position(&columns.treatment)?;
    let outcome_idx = columns
        .outcome
        .as_ref()
        .map(|name| position(name))
        .transpose()?;
    let covariate_idx: Vec<usize> = columns
        .covariates
        .iter()
        .map(|name| position(name))
        .collect::<Result<_>>()?;
    for name in &columns.force_continuous {
        if !columns.covariates.contains(name) {
            return Err(Error::MissingColumn {
                column: name.clone(),
            });
        }
    }

    let p = covariate_idx.len();
    let mut data = Vec::new();
    let mut treatment = Vec::new();
    let mut outcome = outcome_idx.map(|_| Vec::new());

    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let raw = record.get(treatment_idx).unwrap_or("");
        treatment.push(parse_binary(raw).ok_or_else(|| Error::NonBinaryTreatment {
            column: columns.treatment.clone(),
            row,
            value: raw.to_string(),
        })?);
        if let (Some(idx), Some(out)) = (outcome_idx, outcome.as_mut()) {
            let raw = record.get(idx).unwrap_or("");
            out.push(parse_binary(raw).ok_or_else(|| Error::NonBinaryOutcome {
                column: columns.outcome.clone().unwrap_or_default(),
                row,
                value: raw.to_string(),
            })?);
        }
        for (k, &idx) in covariate_idx.iter().enumerate() {
            let raw = record.get(idx).unwrap_or("");
            let value: f64 = raw.trim().parse().map_err(|_| Error::ParseValue {
                column: columns.covariates[k].clone(),
                row,
                value: raw.to_string(),
            })?;
            if !value.is_finite() {
                return Err(Error::NonFiniteValue {
                    column: columns.covariates[k].clone(),
                    row,
                });
            }
            data.push(value);
        }
    }

    let forced: HashSet<&String> = columns.force_continuous.iter().collect();
    let mut kinds = Vec::with_capacity(p);
    let n = treatment.len();
    for (k, name) in columns.covariates.iter().enumerate() {
        let binary = (0..n).all(|i| {
            let v = data[i * p + k];
            v == 0.0 || v == 1.0
        });
        kinds.push(if binary && !forced.contains(name) {
            CovariateKind::Dichotomous
        } else {
            CovariateKind::Continuous
        });
    }

    Study::new(data, columns.covariates.clone(), kinds, treatment, outcome)
}

fn parse_binary(raw: &str) -> Option<u8> {
    match raw.trim() {
        "0" => Some(0),
        "1" => Some(1),
        _ => None,
    }
}
