//! Variable-ratio (1:<=k) nearest matching under a propensity-logit caliper.

use crate::distance::{mahalanobis_unchecked, MahalanobisContext};
use crate::error::{Error, Result};
use crate::logistic::propensity_logits;
use crate::matchers::{Cluster, MatchMethod, MatchResult};
use crate::study::Study;

/// Matches each treated subject to up to `max_ratio` distinct controls,
/// nearest first by Mahalanobis distance, admitting only controls whose
/// propensity logit lies within `caliper_width` of the treated subject's.
///
/// Controls are consumed without replacement, in rounds: every treated
/// subject takes its first admissible control before any takes a second,
/// so scarce controls spread across treated units. Treated subjects with
/// no admissible control at all are discarded and recorded.
///
/// Cluster weights are proportional to cluster size and sum to 1.
pub fn match_full(
    study: &Study,
    ctx: &MahalanobisContext,
    max_ratio: usize,
    caliper_width: f64,
) -> Result<MatchResult> {
    if ctx.dim() != study.n_covariates() {
        return Err(Error::DimensionMismatch {
            expected: study.n_covariates(),
            got: ctx.dim(),
        });
    }
    if max_ratio == 0 {
        return Err(Error::Usage("max_ratio must be at least 1".to_string()));
    }
    if !(caliper_width > 0.0) {
        return Err(Error::DegenerateCaliper);
    }

    let logits = propensity_logits(study)?;
    let treated = study.treated_indices();
    let controls = study.control_indices();

    // Admissible controls per treated unit, nearest first (ties by lower
    // control index, which is the order `controls` already has).
    let mut candidates: Vec<Vec<(f64, usize)>> = treated
        .iter()
        .map(|&t| {
            let row = study.row(t);
            let mut list: Vec<(f64, usize)> = controls
                .iter()
                .enumerate()
                .filter(|&(_, &c)| (logits[t] - logits[c]).abs() <= caliper_width)
                .map(|(slot, &c)| (mahalanobis_unchecked(row, study.row(c), ctx), slot))
                .collect();
            list.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            list
        })
        .collect();

    let mut used = vec![false; controls.len()];
    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); treated.len()];
    let mut cursors = vec![0usize; treated.len()];
    let mut pair_distance_total = 0.0;

    for _round in 0..max_ratio {
        for ti in 0..treated.len() {
            let list = &candidates[ti];
            let cursor = &mut cursors[ti];
            while *cursor < list.len() && used[list[*cursor].1] {
                *cursor += 1;
            }
            if *cursor < list.len() {
                let (d, slot) = list[*cursor];
                used[slot] = true;
                assigned[ti].push(slot);
                pair_distance_total += d;
                *cursor += 1;
            }
        }
    }
    candidates.clear();

    let mut clusters = Vec::new();
    let mut discarded_treated = Vec::new();
    let mut total_matched = 0usize;
    for (ti, slots) in assigned.iter().enumerate() {
        if slots.is_empty() {
            discarded_treated.push(treated[ti]);
        } else {
            total_matched += 1 + slots.len();
        }
    }
    for (ti, slots) in assigned.iter().enumerate() {
        if slots.is_empty() {
            continue;
        }
        let mut members: Vec<usize> = slots.iter().map(|&s| controls[s]).collect();
        members.sort_unstable();
        clusters.push(Cluster {
            treated: vec![treated[ti]],
            controls: members,
            weight: (1 + slots.len()) as f64 / total_matched as f64,
        });
    }
    let discarded_controls = controls
        .iter()
        .enumerate()
        .filter(|&(slot, _)| !used[slot])
        .map(|(_, &c)| c)
        .collect();

    Ok(MatchResult {
        method: MatchMethod::Full,
        clusters,
        discarded_treated,
        discarded_controls,
        total_distance: Some(pair_distance_total),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matchers::test_support::study_1d;
    use approx::assert_relative_eq;

    // In 1-D the propensity logit is monotone in the covariate, so covariate
    // gaps translate directly into logit gaps; these cohorts are built so
    // the caliper either admits everything or blocks the far controls.

    #[test]
    fn one_treated_three_close_controls_form_one_cluster() {
        let study = study_1d(&[0.0], &[0.1, -0.1, 0.2]);
        let ctx = MahalanobisContext::identity(1);
        let result = match_full(&study, &ctx, 3, 1e9).unwrap();
        assert_eq!(result.n_clusters(), 1);
        assert_eq!(result.clusters[0].size(), 4);
        assert_relative_eq!(result.clusters[0].weight, 1.0, epsilon = 1e-12);
        assert!(result.discarded_treated.is_empty());
        assert!(result.discarded_controls.is_empty());
    }

    #[test]
    fn all_controls_outside_caliper_discards_the_treated() {
        let study = study_1d(&[0.0], &[50.0, 60.0, 70.0]);
        let ctx = MahalanobisContext::identity(1);
        let logits = propensity_logits(&study).unwrap();
        let treated_gap = (logits[0] - logits[1]).abs();
        let result = match_full(&study, &ctx, 3, treated_gap / 10.0).unwrap();
        assert_eq!(result.n_clusters(), 0);
        assert_eq!(result.discarded_treated, vec![0]);
        assert_eq!(result.discarded_controls.len(), 3);
    }

    #[test]
    fn rounds_spread_scarce_controls() {
        // Two treated, two controls, everyone admissible: each treated gets
        // one control rather than the first grabbing both.
        let study = study_1d(&[0.0, 0.2], &[0.05, 0.15]);
        let ctx = MahalanobisContext::identity(1);
        let result = match_full(&study, &ctx, 3, 1e6).unwrap();
        assert_eq!(result.n_clusters(), 2);
        for cluster in &result.clusters {
            assert_eq!(cluster.controls.len(), 1);
        }
    }

    #[test]
    fn matched_logit_gaps_respect_the_caliper() {
        use rand::Rng;
        use rand::SeedableRng;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let treated: Vec<f64> = (0..100).map(|_| rng.random_range(-1.0..2.0)).collect();
        let controls: Vec<f64> = (0..300).map(|_| rng.random_range(-2.0..1.0)).collect();
        let study = study_1d(&treated, &controls);
        let ctx = MahalanobisContext::identity(1);
        let width = crate::logistic::logit_caliper_width(&study, 0.2).unwrap();
        let result = match_full(&study, &ctx, 3, width).unwrap();

        // Post-hoc scan: no matched pair exceeds the caliper.
        let logits = propensity_logits(&study).unwrap();
        for cluster in &result.clusters {
            let t = cluster.treated[0];
            for &c in &cluster.controls {
                assert!(
                    (logits[t] - logits[c]).abs() <= width + 1e-12,
                    "pair ({t},{c}) violates the caliper"
                );
            }
            assert!(cluster.controls.len() <= 3);
        }
        assert_relative_eq!(result.weight_sum(), 1.0, epsilon = 1e-9);
    }
}
