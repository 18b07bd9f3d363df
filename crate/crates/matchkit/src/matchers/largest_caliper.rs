//! Largest-caliper matching: accept every treated-control pair whose
//! scaled coordinate differences all fit inside the calipers, then cluster
//! the acceptability graph's connected components.

use crate::distance::{within_calipers, CaliperSpec};
use crate::error::{Error, Result};
use crate::matchers::{Cluster, MatchMethod, MatchResult};
use crate::study::Study;

struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    fn new(len: usize) -> Self {
        UnionFind {
            parent: (0..len).collect(),
            size: vec![1; len],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, x: usize, y: usize) {
        let mut xr = self.find(x);
        let mut yr = self.find(y);
        if xr == yr {
            return;
        }
        if self.size[xr] < self.size[yr] {
            std::mem::swap(&mut xr, &mut yr);
        }
        self.parent[yr] = xr;
        self.size[xr] += self.size[yr];
    }
}

/// Largest-caliper matching over a study.
///
/// An edge joins treated i and control i' when every |x_ip - x_i'p| / c_p
/// is at most 1. Clusters are the connected components of that bipartite
/// graph that contain at least one subject of each role; everyone else is
/// discarded. Cluster weight = component size / total clustered subjects.
pub fn match_largest_caliper(study: &Study, calipers: &CaliperSpec) -> Result<MatchResult> {
    if calipers.len() != study.n_covariates() {
        return Err(Error::DimensionMismatch {
            expected: study.n_covariates(),
            got: calipers.len(),
        });
    }
    let n = study.n_subjects();
    let treated = study.treated_indices();
    let controls = study.control_indices();

    let mut dsu = UnionFind::new(n);
    for &t in &treated {
        let row_t = study.row(t);
        for &c in &controls {
            if within_calipers(row_t, study.row(c), calipers) {
                dsu.union(t, c);
            }
        }
    }

    // Components in order of their smallest member.
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        let root = dsu.find(i);
        members[root].push(i);
    }

    let mut clusters = Vec::new();
    let mut discarded_treated = Vec::new();
    let mut discarded_controls = Vec::new();
    let mut total_clustered = 0usize;
    for component in members.iter().filter(|m| !m.is_empty()) {
        let has_treated = component.iter().any(|&i| study.is_treated(i));
        let has_control = component.iter().any(|&i| !study.is_treated(i));
        if has_treated && has_control {
            total_clustered += component.len();
        } else {
            for &i in component {
                if study.is_treated(i) {
                    discarded_treated.push(i);
                } else {
                    discarded_controls.push(i);
                }
            }
        }
    }
    for component in members.into_iter().filter(|m| !m.is_empty()) {
        let treated_members: Vec<usize> = component
            .iter()
            .copied()
            .filter(|&i| study.is_treated(i))
            .collect();
        let control_members: Vec<usize> = component
            .iter()
            .copied()
            .filter(|&i| !study.is_treated(i))
            .collect();
        if treated_members.is_empty() || control_members.is_empty() {
            continue;
        }
        clusters.push(Cluster {
            weight: component.len() as f64 / total_clustered as f64,
            treated: treated_members,
            controls: control_members,
        });
    }
    discarded_treated.sort_unstable();
    discarded_controls.sort_unstable();

    Ok(MatchResult {
        method: MatchMethod::LargestCaliper,
        clusters,
        discarded_treated,
        discarded_controls,
        total_distance: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matchers::test_support::study_1d;
    use approx::assert_relative_eq;

    #[test]
    fn two_local_clusters_and_a_far_discard() {
        let study = study_1d(&[1.0, 10.0], &[1.5, 9.5, 100.0]);
        let calipers = CaliperSpec::new(vec![1.0]).unwrap();
        let result = match_largest_caliper(&study, &calipers).unwrap();
        assert_eq!(result.n_clusters(), 2);
        assert_eq!(result.clusters[0].treated, vec![0]);
        assert_eq!(result.clusters[0].controls, vec![2]);
        assert_eq!(result.clusters[1].treated, vec![1]);
        assert_eq!(result.clusters[1].controls, vec![3]);
        assert_relative_eq!(result.clusters[0].weight, 0.5, epsilon = 1e-12);
        assert_relative_eq!(result.clusters[1].weight, 0.5, epsilon = 1e-12);
        assert_eq!(result.discarded_controls, vec![4]);
        assert!(result.discarded_treated.is_empty());
    }

    #[test]
    fn unconstrained_calipers_cluster_everyone() {
        let study = study_1d(&[1.0, 2.0], &[100.0, -7.0]);
        let calipers = CaliperSpec::unconstrained(1);
        let result = match_largest_caliper(&study, &calipers).unwrap();
        assert_eq!(result.n_clusters(), 1);
        assert_eq!(result.clusters[0].size(), 4);
        assert_relative_eq!(result.clusters[0].weight, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn vanishing_calipers_discard_everything() {
        let study = study_1d(&[1.0, 2.0], &[1.001, 2.001]);
        let calipers = CaliperSpec::new(vec![1e-6]).unwrap();
        let result = match_largest_caliper(&study, &calipers).unwrap();
        assert_eq!(result.n_clusters(), 0);
        assert_eq!(result.discarded_treated, vec![0, 1]);
        assert_eq!(result.discarded_controls, vec![2, 3]);
    }

    #[test]
    fn chained_acceptability_merges_components() {
        // t0-c0 and t1-c0 acceptable, t1-c1 acceptable: one component of 4.
        let study = study_1d(&[0.0, 1.0], &[0.6, 1.8]);
        let calipers = CaliperSpec::new(vec![0.9]).unwrap();
        let result = match_largest_caliper(&study, &calipers).unwrap();
        assert_eq!(result.n_clusters(), 1);
        assert_eq!(result.clusters[0].treated, vec![0, 1]);
        assert_eq!(result.clusters[0].controls, vec![2, 3]);
    }

    #[test]
    fn exact_boundary_is_acceptable() {
        let study = study_1d(&[0.0], &[1.0]);
        let calipers = CaliperSpec::new(vec![1.0]).unwrap();
        let result = match_largest_caliper(&study, &calipers).unwrap();
        assert_eq!(result.n_clusters(), 1);
    }
}
