//! The matching algorithms and their shared result type.
//!
//! Every matcher consumes an immutable [`Study`](crate::study::Study) plus a
//! distance configuration and produces a [`MatchResult`]: weighted clusters
//! of subject indices plus explicit discard records. All matchers are
//! deterministic given their inputs (and seed, where one applies).

mod full;
mod genetic;
mod largest_caliper;
mod nearest;
mod optimal;

pub use full::match_full;
pub use genetic::{match_genetic, GeneticConfig};
pub use largest_caliper::match_largest_caliper;
pub use nearest::{match_nnwor, match_nnwor_by, match_nnwr};
pub use optimal::match_optimal;

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::study::Study;

/// Which algorithm produced a match (plus the degenerate "no matching"
/// analysis used as a baseline).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MatchMethod {
    Unmatched,
    Nnwr,
    Nnwor,
    Optimal,
    Full,
    Genetic,
    LargestCaliper,
}

impl MatchMethod {
    pub const ALL_MATCHERS: [MatchMethod; 6] = [
        MatchMethod::Nnwr,
        MatchMethod::Nnwor,
        MatchMethod::Optimal,
        MatchMethod::Full,
        MatchMethod::Genetic,
        MatchMethod::LargestCaliper,
    ];

    /// Short token used in CLI arguments and CSV output.
    pub fn token(&self) -> &'static str {
        match self {
            MatchMethod::Unmatched => "unmatched",
            MatchMethod::Nnwr => "nnwr",
            MatchMethod::Nnwor => "nnwor",
            MatchMethod::Optimal => "opt",
            MatchMethod::Full => "full",
            MatchMethod::Genetic => "gm",
            MatchMethod::LargestCaliper => "lc",
        }
    }
}

impl std::fmt::Display for MatchMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for MatchMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "unmatched" => Ok(MatchMethod::Unmatched),
            "nnwr" => Ok(MatchMethod::Nnwr),
            "nnwor" => Ok(MatchMethod::Nnwor),
            "opt" | "optimal" => Ok(MatchMethod::Optimal),
            "full" => Ok(MatchMethod::Full),
            "gm" | "genetic" => Ok(MatchMethod::Genetic),
            "lc" => Ok(MatchMethod::LargestCaliper),
            other => Err(Error::Usage(format!(
                "unknown method `{other}` (expected one of unmatched, nnwr, nnwor, opt, full, gm, lc)"
            ))),
        }
    }
}

/// One matched set: at least one treated and one control subject, plus the
/// normalized analysis weight of the whole set.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub treated: Vec<usize>,
    pub controls: Vec<usize>,
    pub weight: f64,
}

impl Cluster {
    pub fn size(&self) -> usize {
        self.treated.len() + self.controls.len()
    }
}

/// Output of a matcher: weighted clusters plus discard records.
///
/// Weights sum to 1 over clusters whenever any cluster exists. Subjects
/// appear in at most one cluster except for controls under
/// nearest-neighbor matching with replacement.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub method: MatchMethod,
    pub clusters: Vec<Cluster>,
    pub discarded_treated: Vec<usize>,
    pub discarded_controls: Vec<usize>,
    /// Total within-pair distance, for methods where that is defined.
    pub total_distance: Option<f64>,
}

impl MatchResult {
    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn weight_sum(&self) -> f64 {
        self.clusters.iter().map(|c| c.weight).sum()
    }

    /// Treated-role membership entries, with multiplicity.
    pub fn n_treated_entries(&self) -> usize {
        self.clusters.iter().map(|c| c.treated.len()).sum()
    }

    /// Control-role membership entries, with multiplicity.
    pub fn n_control_entries(&self) -> usize {
        self.clusters.iter().map(|c| c.controls.len()).sum()
    }

    /// Distinct subjects appearing in any cluster.
    pub fn matched_subjects(&self) -> Vec<usize> {
        let mut seen: Vec<usize> = self
            .clusters
            .iter()
            .flat_map(|c| c.treated.iter().chain(c.controls.iter()).copied())
            .collect();
        seen.sort_unstable();
        seen.dedup();
        seen
    }

    /// Cluster-weight share of each subject: its cluster's weight divided by
    /// the number of same-role subjects in that cluster, accumulated over
    /// the clusters it appears in. Sums to 1 per role when clusters exist.
    pub fn subject_weights(&self, n_subjects: usize) -> Vec<f64> {
        let mut weights = vec![0.0; n_subjects];
        for cluster in &self.clusters {
            if !cluster.treated.is_empty() {
                let share = cluster.weight / cluster.treated.len() as f64;
                for &i in &cluster.treated {
                    weights[i] += share;
                }
            }
            if !cluster.controls.is_empty() {
                let share = cluster.weight / cluster.controls.len() as f64;
                for &i in &cluster.controls {
                    weights[i] += share;
                }
            }
        }
        weights
    }

    /// Serializes as CSV: one row per cluster membership entry, discards
    /// with cluster_id -1 and weight 0.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(["cluster_id", "subject_index", "role", "weight"])?;
        for (id, cluster) in self.clusters.iter().enumerate() {
            for &i in &cluster.treated {
                writer.write_record([
                    id.to_string(),
                    i.to_string(),
                    "treated".to_string(),
                    format!("{}", cluster.weight),
                ])?;
            }
            for &i in &cluster.controls {
                writer.write_record([
                    id.to_string(),
                    i.to_string(),
                    "control".to_string(),
                    format!("{}", cluster.weight),
                ])?;
            }
        }
        for &i in &self.discarded_treated {
            writer.write_record(["-1".into(), i.to_string(), "treated".to_string(), "0".into()])?;
        }
        for &i in &self.discarded_controls {
            writer.write_record(["-1".into(), i.to_string(), "control".to_string(), "0".into()])?;
        }
        writer.flush()?;
        Ok(())
    }

    /// Reads a match back from its CSV form. The method tag is not part of
    /// the file; callers supply it (for example from the run manifest).
    pub fn from_csv(path: &Path, method: MatchMethod) -> Result<MatchResult> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let bad = |detail: String| Error::MatchFileFormat {
            path: path.display().to_string(),
            detail,
        };
        let mut clusters: BTreeMap<i64, Cluster> = BTreeMap::new();
        let mut discarded_treated = Vec::new();
        let mut discarded_controls = Vec::new();
        for record in reader.records() {
            let record = record?;
            if record.len() < 4 {
                return Err(bad(format!("expected 4 columns, got {}", record.len())));
            }
            let cluster_id: i64 = record[0]
                .trim()
                .parse()
                .map_err(|_| bad(format!("bad cluster_id `{}`", &record[0])))?;
            let subject: usize = record[1]
                .trim()
                .parse()
                .map_err(|_| bad(format!("bad subject_index `{}`", &record[1])))?;
            let role = record[2].trim();
            let weight: f64 = record[3]
                .trim()
                .parse()
                .map_err(|_| bad(format!("bad weight `{}`", &record[3])))?;
            if cluster_id < 0 {
                match role {
                    "treated" => discarded_treated.push(subject),
                    "control" => discarded_controls.push(subject),
                    other => return Err(bad(format!("bad role `{other}`"))),
                }
                continue;
            }
            let cluster = clusters.entry(cluster_id).or_insert_with(|| Cluster {
                treated: Vec::new(),
                controls: Vec::new(),
                weight,
            });
            if (cluster.weight - weight).abs() > 1e-12 {
                return Err(bad(format!(
                    "cluster {cluster_id} has inconsistent weights {} and {weight}",
                    cluster.weight
                )));
            }
            match role {
                "treated" => cluster.treated.push(subject),
                "control" => cluster.controls.push(subject),
                other => return Err(bad(format!("bad role `{other}`"))),
            }
        }
        for cluster in clusters.values() {
            if cluster.treated.is_empty() || cluster.controls.is_empty() {
                return Err(bad("cluster lacks a treated or control member".to_string()));
            }
        }
        Ok(MatchResult {
            method,
            clusters: clusters.into_values().collect(),
            discarded_treated,
            discarded_controls,
            total_distance: None,
        })
    }
}

/// The no-matching baseline: a single cluster holding the entire cohort.
pub fn unmatched(study: &Study) -> MatchResult {
    MatchResult {
        method: MatchMethod::Unmatched,
        clusters: vec![Cluster {
            treated: study.treated_indices(),
            controls: study.control_indices(),
            weight: 1.0,
        }],
        discarded_treated: Vec::new(),
        discarded_controls: Vec::new(),
        total_distance: None,
    }
}

/// Equal-weight 1:1 pair clusters from (treated, control, distance) triples.
pub(crate) fn pairs_to_result(
    method: MatchMethod,
    pairs: &[(usize, usize, f64)],
    discarded_treated: Vec<usize>,
    discarded_controls: Vec<usize>,
) -> MatchResult {
    let weight = if pairs.is_empty() {
        0.0
    } else {
        1.0 / pairs.len() as f64
    };
    let clusters = pairs
        .iter()
        .map(|&(t, c, _)| Cluster {
            treated: vec![t],
            controls: vec![c],
            weight,
        })
        .collect();
    MatchResult {
        method,
        clusters,
        discarded_treated,
        discarded_controls,
        total_distance: Some(pairs.iter().map(|&(_, _, d)| d).sum()),
    }
}
