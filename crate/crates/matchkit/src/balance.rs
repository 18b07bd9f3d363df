//! Covariate-balance diagnostics: standardized differences before and
//! after matching, with Love-plot data export.

use std::path::Path;

use crate::error::{Error, Result};
use crate::matchers::MatchResult;
use crate::study::{CovariateKind, Study};

/// Standardized mean difference for a continuous covariate,
/// `(mean_t - mean_c) / sqrt((var_t + var_c) / 2)` with n-1 variances.
pub fn standardized_difference_continuous(
    treated_values: &[f64],
    control_values: &[f64],
) -> Result<f64> {
    let (mt, vt) = mean_var(treated_values);
    let (mc, vc) = mean_var(control_values);
    if vt == 0.0 && vc == 0.0 {
        return Err(Error::Degenerate(
            "both groups have zero variance".to_string(),
        ));
    }
    Ok((mt - mc) / ((vt + vc) / 2.0).sqrt())
}

/// Standardized difference for a dichotomous covariate from the two group
/// proportions.
pub fn standardized_difference_binary(p_treated: f64, p_control: f64) -> Result<f64> {
    let denom = (p_treated * (1.0 - p_treated) + p_control * (1.0 - p_control)) / 2.0;
    if denom == 0.0 {
        return Err(Error::Degenerate(
            "both proportions are 0 or 1".to_string(),
        ));
    }
    Ok((p_treated - p_control) / denom.sqrt())
}

fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Weighted mean and frequency-weighted variance. Weights are rescaled so
/// they sum to the effective group size `scale`, making the uniform-weight
/// case coincide with the plain sample statistics.
fn weighted_mean_var(pairs: &[(f64, f64)], scale: f64) -> (f64, f64) {
    let wsum: f64 = pairs.iter().map(|&(_, w)| w).sum();
    if wsum == 0.0 {
        return (f64::NAN, 0.0);
    }
    let mean = pairs.iter().map(|&(x, w)| x * w).sum::<f64>() / wsum;
    if scale <= 1.0 {
        return (mean, 0.0);
    }
    let ss = pairs
        .iter()
        .map(|&(x, w)| w / wsum * scale * (x - mean).powi(2))
        .sum::<f64>();
    (mean, ss / (scale - 1.0))
}

/// Per-covariate balance record. `None` marks a degenerate standardized
/// difference (zero denominator).
#[derive(Debug, Clone)]
pub struct CovariateBalance {
    pub name: String,
    pub kind: CovariateKind,
    pub d_unmatched: Option<f64>,
    pub d_matched: Option<f64>,
}

/// Balance of every covariate before and after matching.
#[derive(Debug, Clone)]
pub struct BalanceReport {
    pub records: Vec<CovariateBalance>,
    pub threshold: f64,
    pub n_unmatched_exceeding: usize,
    pub n_matched_exceeding: usize,
}

/// The conventional imbalance flag threshold on |d|.
pub const DEFAULT_THRESHOLD: f64 = 0.1;

/// Standardized differences for every covariate, unmatched and under the
/// given match. Matched statistics weight each subject by its cluster
/// weight split over same-role cluster members, accumulated across
/// clusters, with frequency-weight variance semantics.
pub fn balance_report(study: &Study, result: &MatchResult, threshold: f64) -> Result<BalanceReport> {
    let p = study.n_covariates();
    let treated_idx = study.treated_indices();
    let control_idx = study.control_indices();

    let weights = result.subject_weights(study.n_subjects());
    let m_treated = result.n_treated_entries() as f64;
    let m_controls = result.n_control_entries() as f64;

    let mut records = Vec::with_capacity(p);
    for col in 0..p {
        let kind = study.covariate_kinds()[col];
        let t_vals: Vec<f64> = treated_idx.iter().map(|&i| study.value(i, col)).collect();
        let c_vals: Vec<f64> = control_idx.iter().map(|&i| study.value(i, col)).collect();

        let d_unmatched = match kind {
            CovariateKind::Continuous => standardized_difference_continuous(&t_vals, &c_vals).ok(),
            CovariateKind::Dichotomous => {
                let pt = t_vals.iter().sum::<f64>() / t_vals.len() as f64;
                let pc = c_vals.iter().sum::<f64>() / c_vals.len() as f64;
                standardized_difference_binary(pt, pc).ok()
            }
        };

        let tw: Vec<(f64, f64)> = treated_idx
            .iter()
            .filter(|&&i| weights[i] > 0.0)
            .map(|&i| (study.value(i, col), weights[i]))
            .collect();
        let cw: Vec<(f64, f64)> = control_idx
            .iter()
            .filter(|&&i| weights[i] > 0.0)
            .map(|&i| (study.value(i, col), weights[i]))
            .collect();
        let d_matched = if tw.is_empty() || cw.is_empty() {
            None
        } else {
            let (mt, vt) = weighted_mean_var(&tw, m_treated);
            let (mc, vc) = weighted_mean_var(&cw, m_controls);
            match kind {
                CovariateKind::Continuous => {
                    if vt == 0.0 && vc == 0.0 {
                        None
                    } else {
                        Some((mt - mc) / ((vt + vc) / 2.0).sqrt())
                    }
                }
                CovariateKind::Dichotomous => standardized_difference_binary(mt, mc).ok(),
            }
        };

        records.push(CovariateBalance {
            name: study.covariate_names()[col].clone(),
            kind,
            d_unmatched,
            d_matched,
        });
    }

    let n_unmatched_exceeding = records
        .iter()
        .filter(|r| r.d_unmatched.map(|d| d.abs() > threshold).unwrap_or(false))
        .count();
    let n_matched_exceeding = records
        .iter()
        .filter(|r| r.d_matched.map(|d| d.abs() > threshold).unwrap_or(false))
        .count();

    Ok(BalanceReport {
        records,
        threshold,
        n_unmatched_exceeding,
        n_matched_exceeding,
    })
}

/// One Love-plot row: covariate, method label, |d| (None when degenerate).
pub type LoveRow = (String, String, Option<f64>);

/// Flattens reports into Love-plot rows: one "unmatched" row set from the
/// first report, then one row set per labelled method.
pub fn love_plot_rows(reports: &[(String, BalanceReport)]) -> Vec<LoveRow> {
    let mut rows = Vec::new();
    if let Some((_, first)) = reports.first() {
        for record in &first.records {
            rows.push((
                record.name.clone(),
                "unmatched".to_string(),
                record.d_unmatched.map(f64::abs),
            ));
        }
    }
    for (label, report) in reports {
        for record in &report.records {
            rows.push((
                record.name.clone(),
                label.clone(),
                record.d_matched.map(f64::abs),
            ));
        }
    }
    rows
}

/// Writes Love-plot rows as CSV with columns
/// (covariate, method, abs_standardized_difference). Degenerate entries
/// are written as `NA`.
pub fn write_love_plot_csv(path: &Path, rows: &[LoveRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["covariate", "method", "abs_standardized_difference"])?;
    for (covariate, method, d) in rows {
        let value = match d {
            Some(v) => format!("{v}"),
            None => "NA".to_string(),
        };
        writer.write_record([covariate.as_str(), method.as_str(), value.as_str()])?;
    }
    writer.flush()?;
    Ok(())
}

/// Renders the Love plot as a self-contained SVG dot plot: one row per
/// covariate, one dot per method, a dashed rule at the threshold.
pub fn write_love_plot_svg(path: &Path, rows: &[LoveRow], threshold: f64) -> Result<()> {
    let mut covariates: Vec<&str> = Vec::new();
    let mut methods: Vec<&str> = Vec::new();
    for (c, m, _) in rows {
        if !covariates.contains(&c.as_str()) {
            covariates.push(c);
        }
        if !methods.contains(&m.as_str()) {
            methods.push(m);
        }
    }
    let max_d = rows
        .iter()
        .filter_map(|(_, _, d)| *d)
        .fold(threshold * 2.0, f64::max);

    const PALETTE: [&str; 8] = [
        "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
    ];
    let left = 140.0;
    let width = 560.0;
    let row_height = 18.0;
    let top = 30.0;
    let legend = 24.0 + methods.len() as f64 * 16.0;
    let height = top + covariates.len() as f64 * row_height + legend + 20.0;
    let x_of = |d: f64| left + d / max_d * (width - left - 20.0);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{left}\" y=\"16\">absolute standardized difference</text>\n"
    ));
    let threshold_x = x_of(threshold);
    let plot_bottom = top + covariates.len() as f64 * row_height;
    svg.push_str(&format!(
        "<line x1=\"{threshold_x}\" y1=\"{top}\" x2=\"{threshold_x}\" y2=\"{plot_bottom}\" stroke=\"#444\" stroke-dasharray=\"4 3\"/>\n"
    ));
    for (i, covariate) in covariates.iter().enumerate() {
        let y = top + (i as f64 + 0.5) * row_height;
        svg.push_str(&format!(
            "<text x=\"4\" y=\"{:.1}\" dominant-baseline=\"middle\">{covariate}</text>\n",
            y
        ));
        svg.push_str(&format!(
            "<line x1=\"{left}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#eee\"/>\n",
            width - 20.0
        ));
    }
    for (c, m, d) in rows {
        let Some(d) = d else { continue };
        let row = covariates.iter().position(|x| x == c).unwrap();
        let method = methods.iter().position(|x| x == m).unwrap();
        let y = top + (row as f64 + 0.5) * row_height;
        let color = PALETTE[method % PALETTE.len()];
        svg.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{y:.1}\" r=\"3.5\" fill=\"{color}\" fill-opacity=\"0.85\"/>\n",
            x_of(*d)
        ));
    }
    for (i, method) in methods.iter().enumerate() {
        let y = plot_bottom + 18.0 + i as f64 * 16.0;
        let color = PALETTE[i % PALETTE.len()];
        svg.push_str(&format!(
            "<circle cx=\"{:.1}\" cy=\"{y:.1}\" r=\"3.5\" fill=\"{color}\"/>\n",
            left + 6.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" dominant-baseline=\"middle\">{method}</text>\n",
            left + 16.0,
            y
        ));
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}
