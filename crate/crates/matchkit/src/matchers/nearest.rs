//! Nearest-neighbor matching, with and without replacement of controls.

use crate::distance::{mahalanobis_unchecked, MahalanobisContext};
use crate::error::{Error, Result};
use crate::matchers::{pairs_to_result, MatchMethod, MatchResult};
use crate::study::Study;

fn check_dims(study: &Study, ctx: &MahalanobisContext) -> Result<()> {
    if ctx.dim() != study.n_covariates() {
        return Err(Error::DimensionMismatch {
            expected: study.n_covariates(),
            got: ctx.dim(),
        });
    }
    Ok(())
}

/// Nearest control for a treated row among `controls`, skipping indices for
/// which `usable` is false. Ties resolve to the lowest control index.
fn nearest_control(
    study: &Study,
    ctx: &MahalanobisContext,
    treated: usize,
    controls: &[usize],
    usable: impl Fn(usize) -> bool,
) -> Option<(usize, f64)> {
    let row = study.row(treated);
    let mut best: Option<(usize, f64)> = None;
    for (slot, &c) in controls.iter().enumerate() {
        if !usable(slot) {
            continue;
        }
        let d = mahalanobis_unchecked(row, study.row(c), ctx);
        match best {
            Some((_, bd)) if d >= bd => {}
            _ => best = Some((slot, d)),
        }
    }
    best.map(|(slot, d)| (controls[slot], d))
}

/// Matches every treated subject to its closest control, reusing controls
/// freely. Clusters are equal-weight 1:1 pairs; a control used k times
/// appears in k clusters. Unused controls are recorded as discarded.
pub fn match_nnwr(study: &Study, ctx: &MahalanobisContext) -> Result<MatchResult> {
    check_dims(study, ctx)?;
    let treated = study.treated_indices();
    let controls = study.control_indices();
    let mut used = vec![false; controls.len()];
    let mut pairs = Vec::with_capacity(treated.len());
    for &t in &treated {
        let (c, d) = nearest_control(study, ctx, t, &controls, |_| true)
            .expect("study invariant guarantees at least one control");
        let slot = controls.binary_search(&c).unwrap();
        used[slot] = true;
        pairs.push((t, c, d));
    }
    let discarded_controls = controls
        .iter()
        .enumerate()
        .filter(|&(slot, _)| !used[slot])
        .map(|(_, &c)| c)
        .collect();
    Ok(pairs_to_result(
        MatchMethod::Nnwr,
        &pairs,
        Vec::new(),
        discarded_controls,
    ))
}

/// Greedy 1:1 matching: treated subjects processed in ascending index
/// order, each taking its nearest unused control. With more treated than
/// controls, the surplus treated are discarded and recorded.
pub fn match_nnwor(study: &Study, ctx: &MahalanobisContext) -> Result<MatchResult> {
    let order = study.treated_indices();
    match_nnwor_by(study, ctx, &order)
}

/// Greedy matching with an explicit processing order over treated indices
/// (for example descending propensity logit).
pub fn match_nnwor_by(
    study: &Study,
    ctx: &MahalanobisContext,
    order: &[usize],
) -> Result<MatchResult> {
    check_dims(study, ctx)?;
    let controls = study.control_indices();
    let mut used = vec![false; controls.len()];
    let mut pairs = Vec::new();
    let mut discarded_treated = Vec::new();
    let mut remaining = controls.len();
    for &t in order {
        if remaining == 0 {
            discarded_treated.push(t);
            continue;
        }
        let (c, d) = nearest_control(study, ctx, t, &controls, |slot| !used[slot])
            .expect("remaining > 0 guarantees an unused control");
        let slot = controls.binary_search(&c).unwrap();
        used[slot] = true;
        remaining -= 1;
        pairs.push((t, c, d));
    }
    discarded_treated.sort_unstable();
    let discarded_controls = controls
        .iter()
        .enumerate()
        .filter(|&(slot, _)| !used[slot])
        .map(|(_, &c)| c)
        .collect();
    Ok(pairs_to_result(
        MatchMethod::Nnwor,
        &pairs,
        discarded_treated,
        discarded_controls,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matchers::test_support::study_1d;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_pair_gets_weight_one() {
        let study = study_1d(&[0.0], &[1.0]);
        let ctx = MahalanobisContext::identity(1);
        let result = match_nnwr(&study, &ctx).unwrap();
        assert_eq!(result.n_clusters(), 1);
        assert_eq!(result.clusters[0].weight, 1.0);
        assert_eq!(result.clusters[0].treated, vec![0]);
        assert_eq!(result.clusters[0].controls, vec![1]);
    }

    #[test]
    fn nnwr_reuses_the_shared_nearest_control() {
        // Treated at 0 and 1; controls at 0.4 and 2. Both treated prefer 0.4.
        let study = study_1d(&[0.0, 1.0], &[0.4, 2.0]);
        let ctx = MahalanobisContext::identity(1);
        let result = match_nnwr(&study, &ctx).unwrap();

        // Oracle: exhaustive nearest-control scan per treated unit.
        for cluster in &result.clusters {
            let t = cluster.treated[0];
            let got = cluster.controls[0];
            let want = study
                .control_indices()
                .into_iter()
                .min_by(|&a, &b| {
                    let da = (study.value(t, 0) - study.value(a, 0)).abs();
                    let db = (study.value(t, 0) - study.value(b, 0)).abs();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            assert_eq!(got, want);
        }
        // Control 0.4 (index 2) used twice; control 2.0 (index 3) discarded.
        let uses = result
            .clusters
            .iter()
            .filter(|c| c.controls[0] == 2)
            .count();
        assert_eq!(uses, 2);
        assert_eq!(result.discarded_controls, vec![3]);
        assert_relative_eq!(result.total_distance.unwrap(), 0.4 + 0.6, epsilon = 1e-12);
    }

    #[test]
    fn nnwor_takes_nearest_available() {
        let study = study_1d(&[0.0], &[1.0, 5.0]);
        let ctx = MahalanobisContext::identity(1);
        let result = match_nnwor(&study, &ctx).unwrap();
        assert_eq!(result.clusters[0].controls, vec![1]);
        assert_eq!(result.discarded_controls, vec![2]);
    }

    #[test]
    fn greedy_total_matches_hand_enumeration() {
        // t1=0, t2=0.5; controls 0.45, -0.6. Greedy: (t1,0.45), (t2,-0.6).
        let study = study_1d(&[0.0, 0.5], &[0.45, -0.6]);
        let ctx = MahalanobisContext::identity(1);
        let result = match_nnwor(&study, &ctx).unwrap();
        assert_eq!(result.clusters[0].treated, vec![0]);
        assert_eq!(result.clusters[0].controls, vec![2]);
        assert_eq!(result.clusters[1].treated, vec![1]);
        assert_eq!(result.clusters[1].controls, vec![3]);
        assert_relative_eq!(result.total_distance.unwrap(), 0.45 + 1.1, epsilon = 1e-12);
    }

    #[test]
    fn surplus_treated_are_discarded() {
        let study = study_1d(&[0.0, 1.0, 2.0], &[0.1, 1.1]);
        let ctx = MahalanobisContext::identity(1);
        let result = match_nnwor(&study, &ctx).unwrap();
        assert_eq!(result.n_clusters(), 2);
        assert_eq!(result.discarded_treated, vec![2]);
    }

    #[test]
    fn nnwr_pair_distance_never_exceeds_nnwor() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let treated: Vec<f64> = (0..20).map(|_| rng.random_range(-3.0..3.0)).collect();
            let controls: Vec<f64> = (0..20).map(|_| rng.random_range(-3.0..3.0)).collect();
            let study = study_1d(&treated, &controls);
            let ctx = MahalanobisContext::identity(1);
            let wr = match_nnwr(&study, &ctx).unwrap();
            let wor = match_nnwor(&study, &ctx).unwrap();
            for (a, b) in wr.clusters.iter().zip(wor.clusters.iter()) {
                assert_eq!(a.treated, b.treated);
                let da = (study.value(a.treated[0], 0) - study.value(a.controls[0], 0)).abs();
                let db = (study.value(b.treated[0], 0) - study.value(b.controls[0], 0)).abs();
                assert!(da <= db + 1e-12);
            }
        }
    }

    #[test]
    fn custom_order_changes_greedy_outcome() {
        let study = study_1d(&[0.0, 0.5], &[0.45, -0.6]);
        let ctx = MahalanobisContext::identity(1);
        let reversed = match_nnwor_by(&study, &ctx, &[1, 0]).unwrap();
        // Treated 1 grabs 0.45 first now.
        let grabbed: Vec<usize> = reversed
            .clusters
            .iter()
            .filter(|c| c.treated[0] == 1)
            .map(|c| c.controls[0])
            .collect();
        assert_eq!(grabbed, vec![2]);
    }

    #[test]
    fn ties_break_to_lowest_control_index() {
        let study = study_1d(&[0.0], &[1.0, -1.0]);
        let ctx = MahalanobisContext::identity(1);
        let result = match_nnwr(&study, &ctx).unwrap();
        assert_eq!(result.clusters[0].controls, vec![1]);
    }
}
