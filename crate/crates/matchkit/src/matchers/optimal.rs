//! Exact optimal 1:1 matching: a rectangular minimum-cost assignment
//! solved with shortest augmenting paths over dual potentials.

use crate::distance::{mahalanobis_unchecked, MahalanobisContext};
use crate::error::{Error, Result};
use crate::matchers::{pairs_to_result, MatchMethod, MatchResult};
use crate::study::Study;

const NONE: usize = usize::MAX;

/// Minimum-cost assignment of `nr` rows to `nc` columns (`nr <= nc`),
/// cost given row-major. Returns the assigned column per row.
///
/// Successive shortest augmenting paths with dual variables; exact for
/// finite costs, O(nr^2 * nc).
pub(crate) fn solve_assignment(nr: usize, nc: usize, cost: &[f64]) -> Result<Vec<usize>> {
    assert!(nr <= nc, "assignment requires rows <= columns");
    assert_eq!(cost.len(), nr * nc);

    let mut u = vec![0.0f64; nr];
    let mut v = vec![0.0f64; nc];
    let mut shortest = vec![0.0f64; nc];
    let mut path = vec![NONE; nc];
    let mut col4row = vec![NONE; nr];
    let mut row4col = vec![NONE; nc];
    let mut scanned_rows = vec![false; nr];
    let mut scanned_cols = vec![false; nc];
    let mut remaining = vec![0usize; nc];

    for cur_row in 0..nr {
        // Dijkstra over columns for the shortest augmenting path from cur_row.
        let mut min_val = 0.0f64;
        let mut num_remaining = nc;
        for (it, slot) in remaining.iter_mut().enumerate() {
            *slot = nc - it - 1;
        }
        scanned_rows.iter_mut().for_each(|s| *s = false);
        scanned_cols.iter_mut().for_each(|s| *s = false);
        shortest.iter_mut().for_each(|s| *s = f64::INFINITY);

        let mut i = cur_row;
        let mut sink = NONE;
        while sink == NONE {
            let mut index = NONE;
            let mut lowest = f64::INFINITY;
            scanned_rows[i] = true;

            for it in 0..num_remaining {
                let j = remaining[it];
                let reduced = min_val + cost[i * nc + j] - u[i] - v[j];
                if reduced < shortest[j] {
                    path[j] = i;
                    shortest[j] = reduced;
                }
                // Prefer an unassigned column among equal path costs so
                // degenerate (constant) cost matrices terminate promptly.
                if shortest[j] < lowest || (shortest[j] == lowest && row4col[j] == NONE) {
                    lowest = shortest[j];
                    index = it;
                }
            }

            min_val = lowest;
            if min_val.is_infinite() {
                return Err(Error::Degenerate(
                    "assignment problem is infeasible".to_string(),
                ));
            }
            let j = remaining[index];
            if row4col[j] == NONE {
                sink = j;
            } else {
                i = row4col[j];
            }
            scanned_cols[j] = true;
            num_remaining -= 1;
            remaining[index] = remaining[num_remaining];
        }

        u[cur_row] += min_val;
        for ip in 0..nr {
            if scanned_rows[ip] && ip != cur_row {
                u[ip] += min_val - shortest[col4row[ip]];
            }
        }
        for j in 0..nc {
            if scanned_cols[j] {
                v[j] -= min_val - shortest[j];
            }
        }

        // Augment along the recorded predecessor path.
        let mut j = sink;
        loop {
            let i = path[j];
            row4col[j] = i;
            std::mem::swap(&mut col4row[i], &mut j);
            if i == cur_row {
                break;
            }
        }
    }

    Ok(col4row)
}

/// Optimal 1:1 matching minimizing the total within-pair Mahalanobis
/// distance. Requires at least as many controls as treated subjects.
pub fn match_optimal(study: &Study, ctx: &MahalanobisContext) -> Result<MatchResult> {
    if ctx.dim() != study.n_covariates() {
        return Err(Error::DimensionMismatch {
            expected: study.n_covariates(),
            got: ctx.dim(),
        });
    }
    let treated = study.treated_indices();
    let controls = study.control_indices();
    if controls.len() < treated.len() {
        return Err(Error::InfeasibleAssignment {
            treated: treated.len(),
            controls: controls.len(),
        });
    }

    let nr = treated.len();
    let nc = controls.len();
    let mut cost = vec![0.0f64; nr * nc];
    for (a, &t) in treated.iter().enumerate() {
        let row = study.row(t);
        for (b, &c) in controls.iter().enumerate() {
            cost[a * nc + b] = mahalanobis_unchecked(row, study.row(c), ctx);
        }
    }

    let col4row = solve_assignment(nr, nc, &cost)?;
    let pairs: Vec<(usize, usize, f64)> = col4row
        .iter()
        .enumerate()
        .map(|(a, &b)| (treated[a], controls[b], cost[a * nc + b]))
        .collect();
    let assigned: std::collections::HashSet<usize> = col4row.iter().copied().collect();
    let discarded_controls = (0..nc)
        .filter(|b| !assigned.contains(b))
        .map(|b| controls[b])
        .collect();
    Ok(pairs_to_result(
        MatchMethod::Optimal,
        &pairs,
        Vec::new(),
        discarded_controls,
    ))
}
