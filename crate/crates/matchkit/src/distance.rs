//! Distance kernels: pooled-covariance Mahalanobis distance and the
//! scaled max-coordinate dissimilarity used by largest-caliper matching.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::study::Study;

/// Per-covariate acceptable-imbalance widths.
///
/// A width of `+inf` means differences on that covariate never count
/// against a match; a pair is acceptable when the largest scaled absolute
/// difference over covariates is at most 1.
#[derive(Debug, Clone, PartialEq)]
pub struct CaliperSpec {
    widths: Vec<f64>,
}

impl CaliperSpec {
    /// Validates that every width is strictly positive (`+inf` allowed).
    pub fn new(widths: Vec<f64>) -> Result<Self> {
        for (index, &w) in widths.iter().enumerate() {
            if !(w > 0.0) {
                return Err(Error::InvalidCaliper {
                    name: format!("covariate #{index}"),
                    value: w,
                });
            }
        }
        Ok(CaliperSpec { widths })
    }

    /// All covariates unconstrained: every pair is an acceptable match.
    pub fn unconstrained(p: usize) -> Self {
        CaliperSpec {
            widths: vec![f64::INFINITY; p],
        }
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn len(&self) -> usize {
        self.widths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.widths.is_empty()
    }
}

/// Reads a `name = width` caliper file against a known covariate list.
///
/// Widths use the literal `inf` for +infinity. Covariates absent from the
/// file are unconstrained; names not in `covariate_names` are an error.
/// Blank lines and `#` comments are ignored.
pub fn read_caliper_file(path: &Path, covariate_names: &[String]) -> Result<CaliperSpec> {
    let contents = std::fs::read_to_string(path)?;
    let mut widths = vec![f64::INFINITY; covariate_names.len()];
    for line in contents.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (name, value) = line.split_once('=').ok_or_else(|| Error::Degenerate(format!(
            "caliper line `{line}` is not of the form `name = width`"
        )))?;
        let name = name.trim();
        let value = value.trim();
        let index = covariate_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownCovariate {
                name: name.to_string(),
            })?;
        let width = if value.eq_ignore_ascii_case("inf") {
            f64::INFINITY
        } else {
            value.parse::<f64>().map_err(|_| Error::InvalidCaliper {
                name: name.to_string(),
                value: f64::NAN,
            })?
        };
        if !(width > 0.0) {
            return Err(Error::InvalidCaliper {
                name: name.to_string(),
                value: width,
            });
        }
        widths[index] = width;
    }
    CaliperSpec::new(widths)
}

/// Writes a caliper file in the `name = width` format accepted by
/// [`read_caliper_file`].
pub fn write_caliper_file(
    path: &Path,
    covariate_names: &[String],
    spec: &CaliperSpec,
) -> Result<()> {
    if covariate_names.len() != spec.len() {
        return Err(Error::DimensionMismatch {
            expected: covariate_names.len(),
            got: spec.len(),
        });
    }
    let mut out = String::new();
    for (name, &w) in covariate_names.iter().zip(spec.widths()) {
        if w.is_infinite() {
            out.push_str(&format!("{name} = inf\n"));
        } else {
            out.push_str(&format!("{name} = {w}\n"));
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Inverse pooled covariance for Mahalanobis distances.
#[derive(Debug, Clone)]
pub struct MahalanobisContext {
    /// Row-major P x P inverse covariance.
    inverse: Vec<f64>,
    p: usize,
    regularization: f64,
}

/// Default ridge added to the covariance diagonal before inversion; guards
/// against degeneracy from binary covariates and near-collinearity.
pub const DEFAULT_RIDGE: f64 = 1e-8;

impl MahalanobisContext {
    /// Builds the context from an explicit inverse covariance matrix
    /// (row-major). The matrix must be symmetric to 1e-10 relative tolerance.
    pub fn from_inverse(p: usize, inverse: Vec<f64>) -> Result<Self> {
        if inverse.len() != p * p {
            return Err(Error::DimensionMismatch {
                expected: p * p,
                got: inverse.len(),
            });
        }
        let scale = inverse.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for i in 0..p {
            for j in (i + 1)..p {
                if (inverse[i * p + j] - inverse[j * p + i]).abs() > 1e-10 * scale {
                    return Err(Error::Degenerate(
                        "inverse covariance is not symmetric".to_string(),
                    ));
                }
            }
        }
        Ok(MahalanobisContext {
            inverse,
            p,
            regularization: 0.0,
        })
    }

    /// Identity inverse covariance: Mahalanobis reduces to Euclidean.
    pub fn identity(p: usize) -> Self {
        let mut inverse = vec![0.0; p * p];
        for i in 0..p {
            inverse[i * p + i] = 1.0;
        }
        MahalanobisContext {
            inverse,
            p,
            regularization: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn regularization(&self) -> f64 {
        self.regularization
    }

    /// Row-major P x P inverse covariance entries.
    pub fn inverse_covariance(&self) -> &[f64] {
        &self.inverse
    }

    /// Rescales covariate axes by `sqrt(weights)` before applying the
    /// quadratic form; used by the genetic weight search.
    pub fn reweighted(&self, weights: &[f64]) -> Result<Self> {
        if weights.len() != self.p {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                got: weights.len(),
            });
        }
        let mut inverse = self.inverse.clone();
        for i in 0..self.p {
            for j in 0..self.p {
                inverse[i * self.p + j] *= (weights[i] * weights[j]).sqrt();
            }
        }
        Ok(MahalanobisContext {
            inverse,
            p: self.p,
            regularization: self.regularization,
        })
    }
}

/// Sample covariance over the full cohort (treated and controls pooled,
/// n-1 divisor), plus a ridge on the diagonal, inverted.
///
/// Fails with `SingularCovariance` when the regularized matrix has no
/// Cholesky factor or its inverse fails the identity check at 1e-6.
pub fn pooled_covariance(study: &Study, regularization: f64) -> Result<MahalanobisContext> {
    let n = study.n_subjects();
    let p = study.n_covariates();
    let mut means = vec![0.0; p];
    for i in 0..n {
        for (m, &x) in means.iter_mut().zip(study.row(i)) {
            *m += x;
        }
    }
    for m in &mut means {
        *m /= n as f64;
    }

    let mut cov = DMatrix::<f64>::zeros(p, p);
    for i in 0..n {
        let row = study.row(i);
        for j in 0..p {
            let dj = row[j] - means[j];
            for k in j..p {
                cov[(j, k)] += dj * (row[k] - means[k]);
            }
        }
    }
    let denom = (n - 1) as f64;
    for j in 0..p {
        for k in j..p {
            let v = cov[(j, k)] / denom;
            cov[(j, k)] = v;
            cov[(k, j)] = v;
        }
        cov[(j, j)] += regularization;
    }

    let chol = nalgebra::Cholesky::new(cov.clone()).ok_or(Error::SingularCovariance)?;
    let inverse = chol.inverse();

    // The inverse must actually invert the (regularized) covariance.
    let residual = (&cov * &inverse - DMatrix::<f64>::identity(p, p))
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if residual > 1e-6 {
        return Err(Error::SingularCovariance);
    }

    let mut flat = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..p {
            flat[i * p + j] = inverse[(i, j)];
        }
    }
    Ok(MahalanobisContext {
        inverse: flat,
        p,
        regularization,
    })
}

/// Mahalanobis distance `sqrt((x-y)' S^-1 (x-y))`.
pub fn mahalanobis(x: &[f64], y: &[f64], ctx: &MahalanobisContext) -> Result<f64> {
    if x.len() != ctx.p || y.len() != ctx.p {
        return Err(Error::DimensionMismatch {
            expected: ctx.p,
            got: if x.len() != ctx.p { x.len() } else { y.len() },
        });
    }
    Ok(mahalanobis_unchecked(x, y, ctx))
}

/// Hot-path variant without the dimension check; callers guarantee that
/// both rows come from the study the context was built on.
#[inline]
pub(crate) fn mahalanobis_unchecked(x: &[f64], y: &[f64], ctx: &MahalanobisContext) -> f64 {
    let p = ctx.p;
    let mut q = 0.0;
    for i in 0..p {
        let di = x[i] - y[i];
        let row = &ctx.inverse[i * p..(i + 1) * p];
        let mut acc = 0.0;
        for j in 0..p {
            acc += row[j] * (x[j] - y[j]);
        }
        q += di * acc;
    }
    // Rounding can push tiny quadratic forms a hair below zero.
    q.max(0.0).sqrt()
}

/// Largest scaled coordinate difference `max_p |x_p - y_p| / c_p`.
///
/// A pair is an acceptable match when the result is at most 1. Covariates
/// with infinite width contribute 0.
pub fn caliper_dissimilarity(x: &[f64], y: &[f64], calipers: &CaliperSpec) -> Result<f64> {
    if x.len() != calipers.len() || y.len() != calipers.len() {
        return Err(Error::DimensionMismatch {
            expected: calipers.len(),
            got: if x.len() != calipers.len() {
                x.len()
            } else {
                y.len()
            },
        });
    }
    let mut worst = 0.0f64;
    for ((&a, &b), &c) in x.iter().zip(y).zip(calipers.widths()) {
        // finite / inf == 0, which is exactly the "ignore this covariate" limit
        let scaled = (a - b).abs() / c;
        if scaled > worst {
            worst = scaled;
        }
    }
    Ok(worst)
}

/// True when the pair is an acceptable match under the calipers.
#[inline]
pub(crate) fn within_calipers(x: &[f64], y: &[f64], calipers: &CaliperSpec) -> bool {
    for ((&a, &b), &c) in x.iter().zip(y).zip(calipers.widths()) {
        if (a - b).abs() / c > 1.0 {
            return false;
        }
    }
    true
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

    fn study_from_columns(columns: &[Vec<f64>], treatment: Vec<u8>) -> Study {
        let n = treatment.len();
        let p = columns.len();
        let mut data = vec![0.0; n * p];
        for (j, col) in columns.iter().enumerate() {
            for i in 0..n {
                data[i * p + j] = col[i];
            }
        }
        Study::new(
            data,
            (0..p).map(|j| format!("x{j}")).collect(),
            vec![CovariateKind::Continuous; p],
            treatment,
            None,
        )
        .unwrap()
    }

    #[test]
    fn mahalanobis_is_zero_on_identical_rows() {
        let ctx = MahalanobisContext::identity(3);
        let x = [1.0, -2.0, 0.5];
        assert_eq!(mahalanobis(&x, &x, &ctx).unwrap(), 0.0);
    }

    #[test]
    fn identity_metric_reduces_to_euclidean() {
        let ctx = MahalanobisContext::identity(2);
        let d = mahalanobis(&[1.0, 2.0], &[4.0, 6.0], &ctx).unwrap();
        assert_relative_eq!(d, 5.0, max_relative = 1e-12);
    }

    #[test]
    fn quadratic_form_matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        // Random SPD inverse: A'A + I.
        let a: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut inv = vec![0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += a[k * 3 + i] * a[k * 3 + j];
                }
                inv[i * 3 + j] = s + if i == j { 1.0 } else { 0.0 };
            }
        }
        let ctx = MahalanobisContext::from_inverse(3, inv.clone()).unwrap();
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();

        let mut q = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                q += (x[i] - y[i]) * inv[i * 3 + j] * (x[j] - y[j]);
            }
        }
        let d = mahalanobis(&x, &y, &ctx).unwrap();
        assert_relative_eq!(d, q.sqrt(), max_relative = 1e-12);
        let d_rev = mahalanobis(&y, &x, &ctx).unwrap();
        assert_eq!(d, d_rev);
    }

    #[test]
    fn pooled_covariance_of_standard_normals_inverts_to_identity() {
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut cols = vec![Vec::with_capacity(n), Vec::with_capacity(n)];
        for _ in 0..n {
            cols[0].push(StandardNormal.sample(&mut rng));
            cols[1].push(StandardNormal.sample(&mut rng));
        }
        let mut treatment = vec![0u8; n];
        treatment[0] = 1;
        let study = study_from_columns(&cols, treatment);
        let ctx = pooled_covariance(&study, 0.0).unwrap();

        // Oracle: two-pass sample covariance inverted by the closed 2x2 formula.
        let mean: Vec<f64> = cols.iter().map(|c| c.iter().sum::<f64>() / n as f64).collect();
        let mut s = [0.0f64; 3]; // s00, s01, s11
        for i in 0..n {
            let d0 = cols[0][i] - mean[0];
            let d1 = cols[1][i] - mean[1];
            s[0] += d0 * d0;
            s[1] += d0 * d1;
            s[2] += d1 * d1;
        }
        let denom = (n - 1) as f64;
        let (s00, s01, s11) = (s[0] / denom, s[1] / denom, s[2] / denom);
        let det = s00 * s11 - s01 * s01;
        let oracle = [s11 / det, -s01 / det, -s01 / det, s00 / det];

        for (got, want) in ctx.inverse_covariance().iter().zip(oracle.iter()) {
            assert_relative_eq!(got, want, max_relative = 1e-8);
        }
        // And the inverse is close to the identity for iid standard normals.
        let id = [1.0, 0.0, 0.0, 1.0];
        for (got, want) in ctx.inverse_covariance().iter().zip(id.iter()) {
            assert!((got - want).abs() < 0.05, "entry {got} vs {want}");
        }
    }

    #[test]
    fn constant_covariate_is_singular_without_ridge() {
        let cols = vec![vec![1.0; 10], (0..10).map(|i| i as f64).collect()];
        let mut treatment = vec![0u8; 10];
        treatment[0] = 1;
        let study = study_from_columns(&cols, treatment);
        assert!(matches!(
            pooled_covariance(&study, 0.0),
            Err(Error::SingularCovariance)
        ));
        // A tiny ridge restores invertibility.
        assert!(pooled_covariance(&study, 1e-8).is_ok());
    }

    #[test]
    fn caliper_dissimilarity_age_sex_example() {
        let calipers = CaliperSpec::new(vec![5.0, 1.0]).unwrap();
        let d = caliper_dissimilarity(&[40.0, 1.0], &[43.0, 1.0], &calipers).unwrap();
        assert_relative_eq!(d, 0.6, max_relative = 1e-12);
        assert!(d <= 1.0);

        let d = caliper_dissimilarity(&[40.0, 1.0], &[46.0, 1.0], &calipers).unwrap();
        assert_relative_eq!(d, 1.2, max_relative = 1e-12);
        assert!(d > 1.0);
    }

    #[test]
    fn caliper_dissimilarity_ignores_infinite_widths() {
        let calipers = CaliperSpec::new(vec![f64::INFINITY, 2.0]).unwrap();
        let d = caliper_dissimilarity(&[1000.0, 1.0], &[0.0, 0.0], &calipers).unwrap();
        assert_relative_eq!(d, 0.5, max_relative = 1e-12);
    }

    #[test]
    fn caliper_spec_rejects_nonpositive_widths() {
        assert!(CaliperSpec::new(vec![1.0, 0.0]).is_err());
        assert!(CaliperSpec::new(vec![-2.0]).is_err());
        assert!(CaliperSpec::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn caliper_file_round_trip() {
        let names: Vec<String> = vec!["age".into(), "sex".into(), "bmi".into()];
        let spec = CaliperSpec::new(vec![5.0, 1.0, f64::INFINITY]).unwrap();
        let file = tempfile::NamedTempFile::new().unwrap();
        write_caliper_file(file.path(), &names, &spec).unwrap();
        let read = read_caliper_file(file.path(), &names).unwrap();
        assert_eq!(spec, read);
    }

    #[test]
    fn caliper_file_defaults_missing_names_to_inf() {
        let names: Vec<String> = vec!["age".into(), "sex".into()];
        let file = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(file.path(), "# only constrain age\nage = 2.5\n").unwrap();
        let spec = read_caliper_file(file.path(), &names).unwrap();
        assert_eq!(spec.widths(), &[2.5, f64::INFINITY]);

        std::fs::write(file.path(), "weight = 1\n").unwrap();
        assert!(matches!(
            read_caliper_file(file.path(), &names),
            Err(Error::UnknownCovariate { .. })
        ));
    }
}
