//! Treatment-effect estimation on matched samples and the Monte Carlo
//! performance summaries built from many such estimates.

use std::path::Path;

use crate::error::{Error, Result};
use crate::logistic::{fit_logistic_weighted, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::matchers::{MatchMethod, MatchResult};
use crate::study::Study;

const Z_975: f64 = 1.959963984540054;

/// A log-odds-ratio effect estimate with a 95% Wald interval.
#[derive(Debug, Clone)]
pub struct EffectEstimate {
    pub log_odds_ratio: f64,
    pub odds_ratio: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub method: MatchMethod,
    /// Distinct subjects contributing to the estimate.
    pub n_effective: usize,
}

/// Weighted logistic regression of the outcome on the treatment indicator
/// over the matched subjects.
///
/// Each subject carries its cluster weight divided by the number of
/// same-role members of its cluster, accumulated over clusters and then
/// rescaled so each role's weights sum to that role's membership count
/// (so uniform-weight matches reduce to the ordinary unweighted fit).
pub fn estimate_log_or(study: &Study, result: &MatchResult) -> Result<EffectEstimate> {
    let outcome = study.outcome().ok_or(Error::NoOutcome)?;
    if result.clusters.is_empty() {
        return Err(Error::EmptyMatch);
    }

    let shares = result.subject_weights(study.n_subjects());
    let m_treated = result.n_treated_entries() as f64;
    let m_controls = result.n_control_entries() as f64;

    let mut design = Vec::new();
    let mut response = Vec::new();
    let mut weights = Vec::new();
    let mut n_effective = 0usize;
    for i in 0..study.n_subjects() {
        if shares[i] <= 0.0 {
            continue;
        }
        n_effective += 1;
        let z = study.is_treated(i);
        design.push(f64::from(u8::from(z)));
        response.push(outcome[i]);
        weights.push(shares[i] * if z { m_treated } else { m_controls });
    }

    let model = fit_logistic_weighted(&design, 1, &response, &weights, DEFAULT_MAX_ITER, DEFAULT_TOL)?;
    if model.separated() {
        return Err(Error::Separation);
    }
    let tau = model.coefficients()[0];
    let se = model.standard_error(1);
    Ok(EffectEstimate {
        log_odds_ratio: tau,
        odds_ratio: tau.exp(),
        ci_low: (tau - Z_975 * se).exp(),
        ci_high: (tau + Z_975 * se).exp(),
        method: result.method,
        n_effective,
    })
}

/// Mantel-Haenszel common odds ratio across clusters as strata; the
/// independent cross-check for the weighted logistic estimate.
pub fn mantel_haenszel_or(study: &Study, result: &MatchResult) -> Result<f64> {
    let outcome = study.outcome().ok_or(Error::NoOutcome)?;
    if result.clusters.is_empty() {
        return Err(Error::EmptyMatch);
    }
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    for cluster in &result.clusters {
        let mut a = 0.0; // treated, event
        let mut b = 0.0; // treated, no event
        let mut c = 0.0; // control, event
        let mut d = 0.0; // control, no event
        for &i in &cluster.treated {
            if outcome[i] == 1 {
                a += 1.0;
            } else {
                b += 1.0;
            }
        }
        for &i in &cluster.controls {
            if outcome[i] == 1 {
                c += 1.0;
            } else {
                d += 1.0;
            }
        }
        let n = a + b + c + d;
        numerator += a * d / n;
        denominator += b * c / n;
    }
    if denominator == 0.0 {
        return Err(Error::AllDegenerateStrata);
    }
    Ok(numerator / denominator)
}

/// Bias, empirical SD and root-mean-square error of estimates against the
/// generating effect, over N simulation replications.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodMetrics {
    /// Mean estimate minus the true effect.
    pub bias: f64,
    /// n-1 spread of the estimates around their own mean.
    pub empirical_sd: f64,
    /// sqrt of the mean squared deviation from the true effect (N divisor).
    pub rmse: f64,
    pub n_reps: usize,
}

/// Aggregates replication estimates into the three performance criteria.
/// Requires at least two estimates.
pub fn compute_metrics(estimates: &[f64], tau_true: f64) -> MethodMetrics {
    let n = estimates.len();
    assert!(n >= 2, "compute_metrics needs at least 2 estimates");
    let nf = n as f64;
    let mean = estimates.iter().sum::<f64>() / nf;
    let bias = mean - tau_true;
    let ss_mean = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>();
    let empirical_sd = (ss_mean / (nf - 1.0)).sqrt();
    let ss_true = estimates.iter().map(|e| (e - tau_true).powi(2)).sum::<f64>();
    let rmse = (ss_true / nf).sqrt();
    MethodMetrics {
        bias,
        empirical_sd,
        rmse,
        n_reps: n,
    }
}

/// Writes an effect table as CSV with columns (method, OR, ci_low, ci_high).
pub fn write_effect_table(path: &Path, rows: &[(String, EffectEstimate)]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["method", "or", "ci_low", "ci_high"])?;
    for (label, estimate) in rows {
        writer.write_record([
            label.clone(),
            format!("{}", estimate.odds_ratio),
            format!("{}", estimate.ci_low),
            format!("{}", estimate.ci_high),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matchers::test_support::study_from_rows;
    use crate::matchers::{unmatched, Cluster};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Cohort realizing a single 2x2 table (a,b,c,d) = (treated events,
    /// treated non-events, control events, control non-events).
    pub(crate) fn table_study(a: usize, b: usize, c: usize, d: usize) -> Study {
        let n = a + b + c + d;
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut treatment = Vec::with_capacity(n);
        let mut outcome = Vec::with_capacity(n);
        for i in 0..n {
            rows.push(vec![(i % 3) as f64]);
        }
        for _ in 0..a {
            treatment.push(1);
            outcome.push(1);
        }
        for _ in 0..b {
            treatment.push(1);
            outcome.push(0);
        }
        for _ in 0..c {
            treatment.push(0);
            outcome.push(1);
        }
        for _ in 0..d {
            treatment.push(0);
            outcome.push(0);
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        study_from_rows(
            &flat.chunks(1).map(|c| c).collect::<Vec<_>>(),
            &treatment,
            Some(outcome),
        )
    }

    #[test]
    fn single_cluster_matches_closed_form() {
        let study = table_study(10, 5, 4, 8);
        let result = unmatched(&study);
        let estimate = estimate_log_or(&study, &result).unwrap();
        assert_relative_eq!(estimate.log_odds_ratio, 4.0f64.ln(), epsilon = 1e-8);
        assert_relative_eq!(estimate.odds_ratio, 4.0, epsilon = 1e-7);
        assert!(estimate.ci_low <= estimate.odds_ratio && estimate.odds_ratio <= estimate.ci_high);
        assert_eq!(estimate.n_effective, 27);
    }

    #[test]
    fn mantel_haenszel_single_stratum() {
        let study = table_study(10, 5, 4, 8);
        let result = unmatched(&study);
        assert_relative_eq!(mantel_haenszel_or(&study, &result).unwrap(), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn mantel_haenszel_invariant_under_stratum_replication() {
        let study = table_study(6, 3, 2, 7);
        let single = unmatched(&study);
        let or_single = mantel_haenszel_or(&study, &single).unwrap();

        let duplicated = MatchResult {
            method: MatchMethod::LargestCaliper,
            clusters: vec![single.clusters[0].clone(), single.clusters[0].clone()]
                .into_iter()
                .map(|mut c| {
                    c.weight = 0.5;
                    c
                })
                .collect(),
            discarded_treated: vec![],
            discarded_controls: vec![],
            total_distance: None,
        };
        let or_dup = mantel_haenszel_or(&study, &duplicated).unwrap();
        assert_relative_eq!(or_single, or_dup, epsilon = 1e-12);
    }

    #[test]
    fn null_effect_within_three_standard_errors() {
        let n = 4000;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut treatment = Vec::with_capacity(n);
        let mut outcome = Vec::with_capacity(n);
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            treatment.push(u8::from(rng.random_bool(0.3)));
            outcome.push(u8::from(rng.random_bool(0.2)));
            rows.push([rng.random_range(-1.0..1.0)]);
        }
        let study = study_from_rows(
            &rows.iter().map(|r| r.as_slice()).collect::<Vec<_>>(),
            &treatment,
            Some(outcome),
        );
        let estimate = estimate_log_or(&study, &unmatched(&study)).unwrap();
        let se = (estimate.ci_high.ln() - estimate.log_odds_ratio) / Z_975;
        assert!(estimate.log_odds_ratio.abs() < 3.0 * se);
    }

    #[test]
    fn missing_outcome_is_an_error() {
        let study = study_from_rows(&[&[0.0], &[1.0]], &[1, 0], None);
        assert!(matches!(
            estimate_log_or(&study, &unmatched(&study)),
            Err(Error::NoOutcome)
        ));
    }

    #[test]
    fn empty_match_is_an_error() {
        let study = table_study(2, 2, 2, 2);
        let empty = MatchResult {
            method: MatchMethod::LargestCaliper,
            clusters: vec![],
            discarded_treated: study.treated_indices(),
            discarded_controls: study.control_indices(),
            total_distance: None,
        };
        assert!(matches!(
            estimate_log_or(&study, &empty),
            Err(Error::EmptyMatch)
        ));
    }

    #[test]
    fn weighted_clusters_agree_with_mantel_haenszel_on_homogeneous_strata() {
        // Two strata with identical underlying odds ratio 3.
        let study = {
            let mut rows = Vec::new();
            let mut treatment = Vec::new();
            let mut outcome = Vec::new();
            // Stratum A: treated 9/6 events/non, control 3/6.
            // Stratum B: treated 6/4, control 2/4. Both OR = 3.
            let spec: [(usize, usize, usize, usize); 2] = [(9, 6, 3, 6), (6, 4, 2, 4)];
            for &(a, b, c, d) in &spec {
                for _ in 0..a {
                    rows.push([1.0]);
                    treatment.push(1);
                    outcome.push(1);
                }
                for _ in 0..b {
                    rows.push([1.0]);
                    treatment.push(1);
                    outcome.push(0);
                }
                for _ in 0..c {
                    rows.push([1.0]);
                    treatment.push(0);
                    outcome.push(1);
                }
                for _ in 0..d {
                    rows.push([1.0]);
                    treatment.push(0);
                    outcome.push(0);
                }
            }
            study_from_rows(
                &rows.iter().map(|r| r.as_slice()).collect::<Vec<_>>(),
                &treatment,
                Some(outcome),
            )
        };
        let mut idx = 0usize;
        let mut take = |count: usize| -> Vec<usize> {
            let v: Vec<usize> = (idx..idx + count).collect();
            idx += count;
            v
        };
        let a_treated = [take(9), take(6)].concat();
        let a_controls = [take(3), take(6)].concat();
        let b_treated = [take(6), take(4)].concat();
        let b_controls = [take(2), take(4)].concat();
        let result = MatchResult {
            method: MatchMethod::LargestCaliper,
            clusters: vec![
                Cluster {
                    treated: a_treated,
                    controls: a_controls,
                    weight: 0.6,
                },
                Cluster {
                    treated: b_treated,
                    controls: b_controls,
                    weight: 0.4,
                },
            ],
            discarded_treated: vec![],
            discarded_controls: vec![],
            total_distance: None,
        };
        let mh = mantel_haenszel_or(&study, &result).unwrap();
        let logistic = estimate_log_or(&study, &result).unwrap().odds_ratio;
        assert!(
            (logistic / mh - 1.0).abs() < 0.10,
            "logistic {logistic} vs MH {mh}"
        );
        assert_relative_eq!(mh, 3.0, epsilon = 1e-9);
    }

    #[test]
    fn metrics_of_constant_estimates_are_zero() {
        let m = compute_metrics(&[0.5, 0.5], 0.5);
        assert_eq!(m.bias, 0.0);
        assert_eq!(m.empirical_sd, 0.0);
        assert_eq!(m.rmse, 0.0);
    }

    #[test]
    fn metrics_two_point_case() {
        let m = compute_metrics(&[0.4, 0.6], 0.5);
        assert_relative_eq!(m.bias, 0.0, epsilon = 1e-15);
        assert_relative_eq!(m.empirical_sd, 0.02f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(m.rmse, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn metrics_match_three_pass_oracle_and_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let estimates: Vec<f64> = (0..257).map(|_| rng.random_range(-1.0..2.0)).collect();
        let tau = 0.37;
        let m = compute_metrics(&estimates, tau);

        let n = estimates.len() as f64;
        let mean = estimates.iter().sum::<f64>() / n;
        let bias = mean - tau;
        let sd = (estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let rmse = (estimates.iter().map(|e| (e - tau).powi(2)).sum::<f64>() / n).sqrt();
        assert_relative_eq!(m.bias, bias, epsilon = 1e-12);
        assert_relative_eq!(m.empirical_sd, sd, epsilon = 1e-12);
        assert_relative_eq!(m.rmse, rmse, epsilon = 1e-12);

        // rmse^2 = bias^2 + (N-1)/N * sd^2
        let lhs = m.rmse.powi(2);
        let rhs = m.bias.powi(2) + (n - 1.0) / n * m.empirical_sd.powi(2);
        assert!((lhs - rhs).abs() < 1e-9);
    }
}
