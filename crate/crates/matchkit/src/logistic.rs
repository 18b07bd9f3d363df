//! Logistic regression via iteratively reweighted least squares, with the
//! propensity-score helpers built on top of it.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::study::Study;

/// IRLS defaults.
pub const DEFAULT_MAX_ITER: usize = 50;
pub const DEFAULT_TOL: f64 = 1e-10;
/// A coefficient beyond this magnitude is treated as evidence of separation.
pub const SEPARATION_BOUND: f64 = 30.0;

/// A fitted logistic model: intercept plus one coefficient per design column.
#[derive(Debug, Clone)]
pub struct LogisticModel {
    intercept: f64,
    coefficients: Vec<f64>,
    converged: bool,
    separated: bool,
    /// Row-major (K+1) x (K+1) covariance of [intercept, coefficients].
    covariance: Vec<f64>,
    fitted: Vec<f64>,
    log_likelihood: Vec<f64>,
}

impl LogisticModel {
    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn separated(&self) -> bool {
        self.separated
    }

    /// Covariance of the estimates, row-major over [intercept, coef_1, ...].
    pub fn covariance_of_estimates(&self) -> &[f64] {
        &self.covariance
    }

    /// Standard error of parameter `j` (0 = intercept).
    pub fn standard_error(&self, j: usize) -> f64 {
        let k1 = self.coefficients.len() + 1;
        self.covariance[j * k1 + j].sqrt()
    }

    /// Fitted probabilities for the rows the model was trained on.
    pub fn fitted_probabilities(&self) -> &[f64] {
        &self.fitted
    }

    /// Log-likelihood after each accepted IRLS step, starting at the null
    /// iterate. Non-decreasing by construction.
    pub fn log_likelihood_trace(&self) -> &[f64] {
        &self.log_likelihood
    }

    /// Linear predictor for a covariate row.
    pub fn linear_predictor(&self, row: &[f64]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(row)
                .map(|(b, x)| b * x)
                .sum::<f64>()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^x) without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Maximum-likelihood logistic fit of `response` on `design` (row-major,
/// `k` columns, intercept added internally).
///
/// Converges when the largest score component or parameter step drops
/// below `tol`. Separation is reported through the model flag, not as an
/// error, so downstream propensity calipers stay usable.
pub fn fit_logistic(
    design: &[f64],
    k: usize,
    response: &[u8],
    max_iter: usize,
    tol: f64,
) -> Result<LogisticModel> {
    let weights = vec![1.0; response.len()];
    fit_logistic_weighted(design, k, response, &weights, max_iter, tol)
}

/// Weighted variant of [`fit_logistic`]; each row's likelihood contribution
/// is multiplied by its (frequency) weight.
pub fn fit_logistic_weighted(
    design: &[f64],
    k: usize,
    response: &[u8],
    weights: &[f64],
    max_iter: usize,
    tol: f64,
) -> Result<LogisticModel> {
    let n = response.len();
    if design.len() != n * k {
        return Err(Error::DimensionMismatch {
            expected: n * k,
            got: design.len(),
        });
    }
    if weights.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: weights.len(),
        });
    }
    let k1 = k + 1;
    let mut beta = DVector::<f64>::zeros(k1);
    let mut eta = vec![0.0; n];
    let mut prob = vec![0.5; n];

    let log_lik = |eta: &[f64]| -> f64 {
        let mut ll = 0.0;
        for i in 0..n {
            ll += weights[i] * (response[i] as f64 * eta[i] - softplus(eta[i]));
        }
        ll
    };

    let mut ll = log_lik(&eta);
    let mut trace = vec![ll];
    let mut converged = false;

    for _ in 0..max_iter {
        // Score and observed information.
        let mut score = DVector::<f64>::zeros(k1);
        let mut info = DMatrix::<f64>::zeros(k1, k1);
        for i in 0..n {
            let row = &design[i * k..(i + 1) * k];
            let resid = weights[i] * (response[i] as f64 - prob[i]);
            let w = weights[i] * prob[i] * (1.0 - prob[i]);
            score[0] += resid;
            info[(0, 0)] += w;
            for a in 0..k {
                score[a + 1] += resid * row[a];
                info[(0, a + 1)] += w * row[a];
                for b in a..k {
                    info[(a + 1, b + 1)] += w * row[a] * row[b];
                }
            }
        }
        for a in 0..k1 {
            for b in (a + 1)..k1 {
                info[(b, a)] = info[(a, b)];
            }
        }

        let max_score = score.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        if max_score < tol {
            converged = true;
            break;
        }

        let step = Cholesky::new(info.clone()).map(|chol| chol.solve(&score));
        let step = match step {
            Some(step) if step.iter().all(|s| s.is_finite()) => step,
            // A zero pivot leaves Some() with non-finite entries, so both
            // arms land here. Vanishing weights under separation also make
            // the information numerically singular; report the flagged
            // estimates in that case instead of aborting.
            _ => {
                if beta.iter().any(|b| b.abs() > SEPARATION_BOUND) {
                    break;
                }
                return Err(Error::RankDeficient);
            }
        };

        // Halve the step until the log-likelihood does not decrease, so the
        // trace is monotone.
        let mut scale = 1.0;
        let mut accepted = false;
        while scale > 1e-12 {
            let candidate = &beta + &step * scale;
            let mut eta_new = vec![0.0; n];
            for i in 0..n {
                let row = &design[i * k..(i + 1) * k];
                let mut e = candidate[0];
                for a in 0..k {
                    e += candidate[a + 1] * row[a];
                }
                eta_new[i] = e;
            }
            let ll_new = log_lik(&eta_new);
            if ll_new >= ll {
                beta = candidate;
                eta = eta_new;
                ll = ll_new;
                trace.push(ll);
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
        for i in 0..n {
            prob[i] = sigmoid(eta[i]);
        }

        let max_step = step.iter().fold(0.0f64, |m, s| m.max((s * scale).abs()));
        if max_step < tol {
            converged = true;
            break;
        }
    }

    let separated = beta.iter().any(|b| b.abs() > SEPARATION_BOUND);

    // Covariance = inverse observed information at the final estimates.
    let mut info = DMatrix::<f64>::zeros(k1, k1);
    for i in 0..n {
        let row = &design[i * k..(i + 1) * k];
        let p = sigmoid(eta[i]);
        let w = weights[i] * p * (1.0 - p);
        info[(0, 0)] += w;
        for a in 0..k {
            info[(0, a + 1)] += w * row[a];
            for b in a..k {
                info[(a + 1, b + 1)] += w * row[a] * row[b];
            }
        }
    }
    for a in 0..k1 {
        for b in (a + 1)..k1 {
            info[(b, a)] = info[(a, b)];
        }
    }
    let covariance = match Cholesky::new(info).map(|chol| chol.inverse()) {
        Some(inv) if inv.iter().all(|v| v.is_finite()) => {
            let mut flat = vec![0.0; k1 * k1];
            for a in 0..k1 {
                for b in 0..k1 {
                    flat[a * k1 + b] = inv[(a, b)];
                }
            }
            flat
        }
        _ => vec![f64::NAN; k1 * k1],
    };

    let fitted: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
    Ok(LogisticModel {
        intercept: beta[0],
        coefficients: beta.iter().skip(1).copied().collect(),
        converged: converged && !separated,
        separated,
        covariance,
        fitted,
        log_likelihood: trace,
    })
}

/// Logit of the propensity score for one covariate row.
pub fn propensity_logit(model: &LogisticModel, row: &[f64]) -> f64 {
    model.linear_predictor(row)
}

/// Fits treatment ~ covariates and returns every subject's propensity logit.
pub fn propensity_logits(study: &Study) -> Result<Vec<f64>> {
    let model = propensity_model(study)?;
    Ok((0..study.n_subjects())
        .map(|i| model.linear_predictor(study.row(i)))
        .collect())
}

/// The treatment-assignment model underlying propensity logits.
pub fn propensity_model(study: &Study) -> Result<LogisticModel> {
    let n = study.n_subjects();
    let p = study.n_covariates();
    let mut design = Vec::with_capacity(n * p);
    for i in 0..n {
        design.extend_from_slice(study.row(i));
    }
    fit_logistic(&design, p, study.treatment(), DEFAULT_MAX_ITER, DEFAULT_TOL)
}

/// `multiplier` times the sample standard deviation (n-1 divisor) of the
/// propensity logit over all subjects. The conventional multiplier is 0.2.
pub fn logit_caliper_width(study: &Study, multiplier: f64) -> Result<f64> {
    let logits = propensity_logits(study)?;
    caliper_from_logits(&logits, multiplier)
}

/// Same rule applied to externally supplied logits.
pub fn caliper_from_logits(logits: &[f64], multiplier: f64) -> Result<f64> {
    let n = logits.len() as f64;
    let mean = logits.iter().sum::<f64>() / n;
    let var = logits.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    if sd == 0.0 {
        return Err(Error::DegenerateCaliper);
    }
    Ok(multiplier * sd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::study::CovariateKind;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// 2x2 table: 10/5 events among treated, 4/8 among controls.
    fn two_by_two_design() -> (Vec<f64>, Vec<u8>) {
        let mut design = Vec::new();
        let mut response = Vec::new();
        for _ in 0..10 {
            design.push(1.0);
            response.push(1);
        }
        for _ in 0..5 {
            design.push(1.0);
            response.push(0);
        }
        for _ in 0..4 {
            design.push(0.0);
            response.push(1);
        }
        for _ in 0..8 {
            design.push(0.0);
            response.push(0);
        }
        (design, response)
    }

    #[test]
    fn two_by_two_recovers_closed_form_log_odds_ratio() {
        let (design, response) = two_by_two_design();
        let model = fit_logistic(&design, 1, &response, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
        assert!(model.converged());
        assert!(!model.separated());
        let expected = (10.0f64 * 8.0 / (5.0 * 4.0)).ln();
        assert_relative_eq!(model.coefficients()[0], expected, epsilon = 1e-8);
        assert_relative_eq!(model.intercept(), (4.0f64 / 8.0).ln(), epsilon = 1e-8);
        // Classic 2x2 variance of the log odds ratio.
        let var = model.covariance_of_estimates()[3];
        assert_relative_eq!(var, 1.0 / 10.0 + 1.0 / 5.0 + 1.0 / 4.0 + 1.0 / 8.0, epsilon = 1e-6);
    }

    #[test]
    fn zero_column_is_rank_deficient() {
        let n = 20;
        let mut design = vec![0.0; n * 2];
        for i in 0..n {
            design[i * 2] = (i % 5) as f64;
        }
        let response: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let err = fit_logistic(&design, 2, &response, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap_err();
        assert!(matches!(err, Error::RankDeficient));
    }

    #[test]
    fn caliper_of_unit_sd_logits() {
        let width = caliper_from_logits(&[-1.0, 0.0, 1.0], 0.2).unwrap();
        assert_relative_eq!(width, 0.2, epsilon = 1e-15);
        assert!(matches!(
            caliper_from_logits(&[0.3, 0.3, 0.3], 0.2),
            Err(Error::DegenerateCaliper)
        ));
    }

    #[test]
    fn recovers_generating_coefficients_within_three_standard_errors() {
        let n = 100_000;
        let (b0, b1) = (-1.0, 0.7);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut design = Vec::with_capacity(n);
        let mut response = Vec::with_capacity(n);
        for _ in 0..n {
            let x: f64 = StandardNormal.sample(&mut rng);
            design.push(x);
            let p = sigmoid(b0 + b1 * x);
            response.push(u8::from(rng.random_bool(p)));
        }
        let model = fit_logistic(&design, 1, &response, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
        assert!(model.converged());
        let se0 = model.standard_error(0);
        let se1 = model.standard_error(1);
        assert!((model.intercept() - b0).abs() < 3.0 * se0);
        assert!((model.coefficients()[0] - b1).abs() < 3.0 * se1);
    }

    #[test]
    fn log_likelihood_trace_is_monotone() {
        let (design, response) = two_by_two_design();
        let model = fit_logistic(&design, 1, &response, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
        let trace = model.log_likelihood_trace();
        assert!(trace.len() >= 2);
        for w in trace.windows(2) {
            assert!(w[1] >= w[0], "log-likelihood decreased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn separation_is_flagged_not_fatal() {
        // Perfectly separated data.
        let design: Vec<f64> = vec![-2.0, -1.0, -0.5, 0.5, 1.0, 2.0];
        let response: Vec<u8> = vec![0, 0, 0, 1, 1, 1];
        let model = fit_logistic(&design, 1, &response, 200, DEFAULT_TOL).unwrap();
        assert!(model.separated());
        assert!(model.coefficients()[0] > SEPARATION_BOUND);
    }

    #[test]
    fn sigmoid_of_logit_reproduces_fitted_probabilities() {
        let (design, response) = two_by_two_design();
        let model = fit_logistic(&design, 1, &response, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
        for (i, &p) in model.fitted_probabilities().iter().enumerate() {
            let row = &design[i..i + 1];
            let recomputed = sigmoid(propensity_logit(&model, row));
            assert!((recomputed - p).abs() < 1e-12);
        }
    }

    #[test]
    fn intercept_only_recovers_logit_of_rate() {
        // 1 event in 10 -> intercept = logit(0.1) = ln(1/9).
        let design: Vec<f64> = vec![];
        let response: Vec<u8> = vec![1, 0, 0, 0, 0, 0, 0, 0, 0, 0];
        let model = fit_logistic(&design, 0, &response, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
        assert_relative_eq!(model.intercept(), (1.0f64 / 9.0).ln(), epsilon = 1e-9);
    }

    fn toy_study(values: &[f64], treatment: &[u8]) -> Study {
        Study::new(
            values.to_vec(),
            vec!["x".into()],
            vec![CovariateKind::Continuous],
            treatment.to_vec(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn caliper_width_matches_two_pass_oracle() {
        let n = 400;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let values: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let treatment: Vec<u8> = values
            .iter()
            .map(|&x| u8::from(rng.random_bool(sigmoid(-0.5 + 0.9 * x))))
            .collect();
        if treatment.iter().all(|&z| z == treatment[0]) {
            panic!("degenerate draw for test");
        }
        let study = toy_study(&values, &treatment);
        let width = logit_caliper_width(&study, 0.2).unwrap();

        let logits = propensity_logits(&study).unwrap();
        let mean = logits.iter().sum::<f64>() / logits.len() as f64;
        let var = logits.iter().map(|l| (l - mean).powi(2)).sum::<f64>()
            / (logits.len() as f64 - 1.0);
        assert_relative_eq!(width, 0.2 * var.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn constant_logits_degenerate_caliper() {
        // A covariate carrying no signal still produces varying logits in
        // general; force constancy with a constant covariate and ridge-free
        // fit failing is not the point here, so fake it through a cohort
        // where the fitted slope is finite but the covariate is constant.
        let values = vec![1.0; 6];
        let treatment = vec![1, 0, 1, 0, 1, 0];
        let study = toy_study(&values, &treatment);
        // Constant column + intercept is rank deficient.
        assert!(matches!(
            logit_caliper_width(&study, 0.2),
            Err(Error::RankDeficient) | Err(Error::DegenerateCaliper)
        ));
    }
}
