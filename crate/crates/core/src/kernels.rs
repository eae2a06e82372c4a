//! Conditionally Gaussian algebra for one period.
//!
//! Given the factor variances `Λ^F`, idiosyncratic variances `Λ^E` and the
//! factor mean shift `m` (zero unless GARCH-in-mean), the observation is
//! `y ~ N(β m, β Λ^F β' + Λ^E)` and the factor posterior is Gaussian with
//! precision `β' (Λ^E)⁻¹ β + (Λ^F)⁻¹`. Everything here works on K x K
//! matrices; the N x N covariance is never formed.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Exact posterior of the factors for one period.
#[derive(Debug, Clone)]
pub struct FactorPosterior {
    pub mean: DVector<f64>,
    /// Lower Cholesky factor of the posterior covariance `H`.
    pub covariance_factor: DMatrix<f64>,
    /// `log p(y | history)`.
    pub log_marginal: f64,
}

impl FactorPosterior {
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.covariance_factor * self.covariance_factor.transpose()
    }
}

/// Sufficient statistics of one observation vector under fixed idiosyncratic
/// variances. Shared by every particle whose `Λ^E` agrees.
#[derive(Debug, Clone)]
pub struct ObservationTerms {
    n: usize,
    /// β' (Λ^E)⁻¹ β
    gram: DMatrix<f64>,
    /// β' (Λ^E)⁻¹ y
    score: DVector<f64>,
    /// y' (Λ^E)⁻¹ y
    y_quad: f64,
    log_det_idio: f64,
}

/// One-step predictive quantities for a single factor-variance state.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub log_lik: f64,
    pub mean: DVector<f64>,
    precision_chol: Cholesky<f64, Dyn>,
}

impl Prediction {
    /// Draws `f ~ N(mean, H)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let k = self.mean.len();
        let z = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
        // precision = L L'  =>  L'^{-1} z has covariance H.
        let l = self.precision_chol.l_dirty();
        let x = l.transpose().solve_upper_triangular(&z).expect("Cholesky factor has a positive diagonal");
        &self.mean + x
    }
}

fn check_variances(v: &[f64], what: &str) -> Result<()> {
    if let Some((i, x)) = v.iter().enumerate().find(|(_, x)| !(**x > 0.0 && x.is_finite())) {
        return Err(Error::domain(format!("{what} variance {i} is {x}; must be positive and finite")));
    }
    Ok(())
}

impl ObservationTerms {
    pub fn new(y: &[f64], loadings: &DMatrix<f64>, idio_vars: &[f64]) -> Result<Self> {
        let (n, k) = loadings.shape();
        debug_assert_eq!(y.len(), n);
        debug_assert_eq!(idio_vars.len(), n);
        check_variances(idio_vars, "idiosyncratic")?;
        let mut gram = DMatrix::zeros(k, k);
        let mut score = DVector::zeros(k);
        let mut y_quad = 0.0;
        let mut log_det_idio = 0.0;
        for i in 0..n {
            let w = 1.0 / idio_vars[i];
            log_det_idio += idio_vars[i].ln();
            y_quad += w * y[i] * y[i];
            for a in 0..k {
                let ba = w * loadings[(i, a)];
                score[a] += ba * y[i];
                for b in 0..=a {
                    gram[(a, b)] += ba * loadings[(i, b)];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                gram[(b, a)] = gram[(a, b)];
            }
        }
        Ok(ObservationTerms { n, gram, score, y_quad, log_det_idio })
    }

    /// Predictive density and factor posterior for the given factor state.
    pub fn predict(&self, mean_shift: &[f64], factor_vars: &[f64]) -> Result<Prediction> {
        let k = self.score.len();
        check_variances(factor_vars, "factor")?;
        let mut precision = self.gram.clone();
        let mut rhs = self.score.clone();
        let mut log_det_factor = 0.0;
        for a in 0..k {
            precision[(a, a)] += 1.0 / factor_vars[a];
            rhs[a] += mean_shift[a] / factor_vars[a];
            log_det_factor += factor_vars[a].ln();
        }
        let chol = Cholesky::new(precision.clone()).ok_or_else(|| {
            Error::numeric(format!(
                "factor posterior precision lost positive definiteness: {precision:?} (factor variances {factor_vars:?})"
            ))
        })?;
        let l = chol.l_dirty();
        let log_det_precision = 2.0 * (0..k).map(|a| l[(a, a)].ln()).sum::<f64>();

        // u = β'(Λ^E)⁻¹ (y - β m);  r'(Λ^E)⁻¹ r expanded in K-space.
        let m = DVector::from_column_slice(mean_shift);
        let gm = &self.gram * &m;
        let u = &self.score - &gm;
        let resid_quad = self.y_quad - 2.0 * m.dot(&self.score) + m.dot(&gm);
        let v = l.solve_lower_triangular(&u).expect("positive diagonal");
        let quad = resid_quad - v.norm_squared();
        let log_det_cov = self.log_det_idio + log_det_factor + log_det_precision;
        let log_lik = -0.5 * (self.n as f64 * LN_2PI + log_det_cov + quad);
        if !log_lik.is_finite() {
            return Err(Error::numeric(format!("non-finite predictive log density {log_lik}")));
        }
        let mean = chol.solve(&rhs);
        Ok(Prediction { log_lik, mean, precision_chol: chol })
    }
}

/// `log N(y; β m, β Λ^F β' + Λ^E)`.
pub fn marginal_loglik(
    y: &DVector<f64>,
    mean_shift: &DVector<f64>,
    loadings: &DMatrix<f64>,
    factor_vars: &DVector<f64>,
    idio_vars: &DVector<f64>,
) -> Result<f64> {
    let terms = ObservationTerms::new(y.as_slice(), loadings, idio_vars.as_slice())?;
    Ok(terms.predict(mean_shift.as_slice(), factor_vars.as_slice())?.log_lik)
}

/// Exact conditional posterior of the factors given one observation.
pub fn factor_posterior(
    y: &DVector<f64>,
    mean_shift: &DVector<f64>,
    loadings: &DMatrix<f64>,
    factor_vars: &DVector<f64>,
    idio_vars: &DVector<f64>,
) -> Result<FactorPosterior> {
    let terms = ObservationTerms::new(y.as_slice(), loadings, idio_vars.as_slice())?;
    let pred = terms.predict(mean_shift.as_slice(), factor_vars.as_slice())?;
    let cov = pred.precision_chol.inverse();
    let covariance_factor =
        Cholesky::new(cov.clone()).ok_or_else(|| Error::numeric(format!("posterior covariance not positive definite: {cov:?}")))?.l();
    Ok(FactorPosterior { mean: pred.mean, covariance_factor, log_marginal: pred.log_lik })
}

/// `Σ_i log N(x_i; 0, v_i)`.
#[inline]
pub fn log_normal_diag(x: impl IntoIterator<Item = f64>, vars: impl IntoIterator<Item = f64>) -> f64 {
    x.into_iter().zip(vars).map(|(x, v)| -0.5 * (LN_2PI + v.ln() + x * x / v)).sum()
}

/// `log N(x; mean, v)` for a scalar.
#[inline]
pub fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

/// `log Σ exp(x_i)` with max subtraction; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn dv(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    /// Dense log N(y; β m, β Λ^F β' + Λ^E) via an N x N Cholesky.
    fn dense_loglik(y: &DVector<f64>, m: &DVector<f64>, b: &DMatrix<f64>, lf: &DVector<f64>, le: &DVector<f64>) -> f64 {
        let n = y.len();
        let w = b * DMatrix::from_diagonal(lf) * b.transpose() + DMatrix::from_diagonal(le);
        let chol = Cholesky::new(w).unwrap();
        let r = y - b * m;
        let logdet = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        let quad = r.dot(&chol.solve(&r));
        -0.5 * (n as f64 * LN_2PI + logdet + quad)
    }

    fn joint_log(f: &DVector<f64>, y: &DVector<f64>, m: &DVector<f64>, b: &DMatrix<f64>, lf: &DVector<f64>, le: &DVector<f64>) -> f64 {
        let r = y - b * f;
        log_normal_diag((f - m).iter().copied(), lf.iter().copied()) + log_normal_diag(r.iter().copied(), le.iter().copied())
    }

    fn log_mvn(x: &DVector<f64>, mean: &DVector<f64>, chol_lower: &DMatrix<f64>) -> f64 {
        let k = x.len();
        let z = chol_lower.solve_lower_triangular(&(x - mean)).unwrap();
        let logdet = 2.0 * chol_lower.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        -0.5 * (k as f64 * LN_2PI + logdet + z.norm_squared())
    }

    #[test]
    fn scalar_example() {
        let ll = marginal_loglik(&dv(&[0.0]), &dv(&[0.0]), &DMatrix::from_element(1, 1, 1.0), &dv(&[1.0]), &dv(&[1.0])).unwrap();
        assert_relative_eq!(ll, -0.5 * (4.0 * std::f64::consts::PI).ln(), epsilon = 1e-14);
        assert_relative_eq!(ll, -1.265_512_123_484_645, epsilon = 1e-12);

        let post = factor_posterior(&dv(&[2.0]), &dv(&[0.0]), &DMatrix::from_element(1, 1, 1.0), &dv(&[1.0]), &dv(&[1.0])).unwrap();
        assert_relative_eq!(post.mean[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(post.covariance()[(0, 0)], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn zero_loadings_decouple() {
        let y = dv(&[0.3, -1.2, 2.0]);
        let le = dv(&[0.5, 1.5, 2.5]);
        let ll = marginal_loglik(&y, &dv(&[0.4, 0.1]), &DMatrix::zeros(3, 2), &dv(&[1.0, 3.0]), &le).unwrap();
        let expect: f64 = (0..3).map(|i| log_normal(y[i], 0.0, le[i])).sum();
        assert_relative_eq!(ll, expect, epsilon = 1e-12);
    }

    #[test]
    fn zero_observation_gives_zero_mean() {
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.4, 1.0, -0.3, 0.8]);
        let post = factor_posterior(&dv(&[0.0; 3]), &dv(&[0.0; 2]), &b, &dv(&[1.0, 2.0]), &dv(&[0.1, 0.2, 0.3])).unwrap();
        assert!(post.mean.iter().all(|m| m.abs() < 1e-15));
    }

    #[test]
    fn non_positive_variance_is_a_domain_error() {
        let b = DMatrix::from_element(1, 1, 1.0);
        assert!(matches!(marginal_loglik(&dv(&[0.0]), &dv(&[0.0]), &b, &dv(&[0.0]), &dv(&[1.0])), Err(Error::Domain(_))));
        assert!(matches!(marginal_loglik(&dv(&[0.0]), &dv(&[0.0]), &b, &dv(&[1.0]), &dv(&[-1.0])), Err(Error::Domain(_))));
    }

    #[test]
    fn random_instance_matches_dense_oracle() {
        let b = DMatrix::from_row_slice(6, 2, &[0.9, 0.1, -0.4, 1.2, 0.3, -0.7, 1.1, 0.5, -0.2, 0.0, 0.6, 0.8]);
        let y = dv(&[0.5, -1.0, 0.25, 2.0, -0.3, 0.9]);
        let m = dv(&[0.2, -0.1]);
        let lf = dv(&[1.3, 0.4]);
        let le = dv(&[0.2, 0.5, 0.3, 1.0, 0.05, 0.7]);
        let ll = marginal_loglik(&y, &m, &b, &lf, &le).unwrap();
        assert!((ll - dense_loglik(&y, &m, &b, &lf, &le)).abs() < 1e-10);
    }

    #[test]
    fn posterior_matches_grid_bayes_rule() {
        // K = 1, N = 3: joint / posterior density must be the constant p(y) on a grid.
        let b = DMatrix::from_column_slice(3, 1, &[1.0, 0.6, -0.8]);
        let y = dv(&[0.7, 0.1, -0.9]);
        let m = dv(&[0.3]);
        let lf = dv(&[0.8]);
        let le = dv(&[0.3, 0.5, 0.2]);
        let post = factor_posterior(&y, &m, &b, &lf, &le).unwrap();
        let py = post.log_marginal.exp();
        let mut max_rel: f64 = 0.0;
        for g in 0..=200 {
            let f = dv(&[-3.0 + 6.0 * g as f64 / 200.0]);
            let joint = joint_log(&f, &y, &m, &b, &lf, &le).exp();
            let dens = log_mvn(&f, &post.mean, &post.covariance_factor).exp();
            max_rel = max_rel.max((joint / dens - py).abs() / py);
        }
        assert!(max_rel < 1e-8, "max relative error {max_rel}");
    }

    #[test]
    fn rescaling_one_series_shifts_by_jacobian() {
        let mut b = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.4, 1.0, -0.3, 0.8]);
        let mut y = dv(&[0.2, -0.4, 1.1]);
        let mut le = dv(&[0.3, 0.2, 0.6]);
        let m = dv(&[0.0, 0.0]);
        let lf = dv(&[1.0, 0.5]);
        let before = marginal_loglik(&y, &m, &b, &lf, &le).unwrap();
        let c: f64 = -2.5;
        y[1] *= c;
        b.row_mut(1).scale_mut(c);
        le[1] *= c * c;
        let after = marginal_loglik(&y, &m, &b, &lf, &le).unwrap();
        assert_relative_eq!(after, before - c.abs().ln(), epsilon = 1e-12);
    }

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        assert_relative_eq!(log_sum_exp(&[-1000.0, -1000.0]), -1000.0 + 2f64.ln(), epsilon = 1e-12);
    }

    fn instance() -> impl Strategy<Value = (DVector<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> {
        (1usize..=20, 1usize..=4).prop_flat_map(|(n, k)| {
            (
                proptest::collection::vec(-3.0f64..3.0, n),
                proptest::collection::vec(-1.0f64..1.0, k),
                proptest::collection::vec(-2.0f64..2.0, n * k),
                proptest::collection::vec(0.05f64..3.0, k),
                proptest::collection::vec(0.05f64..3.0, n),
                proptest::collection::vec(-3.0f64..3.0, k),
            )
                .prop_map(move |(y, m, b, lf, le, f)| (dv(&y), dv(&m), DMatrix::from_row_slice(n, k, &b), dv(&lf), dv(&le), dv(&f)))
        })
    }

    proptest! {
        #[test]
        fn woodbury_agrees_with_dense((y, m, b, lf, le, _f) in instance()) {
            let fast = marginal_loglik(&y, &m, &b, &lf, &le).unwrap();
            let slow = dense_loglik(&y, &m, &b, &lf, &le);
            prop_assert!((fast - slow).abs() < 1e-10, "{fast} vs {slow}");
        }

        #[test]
        fn joint_factorises((y, m, b, lf, le, f) in instance()) {
            let post = factor_posterior(&y, &m, &b, &lf, &le).unwrap();
            let lhs = post.log_marginal + log_mvn(&f, &post.mean, &post.covariance_factor);
            let rhs = joint_log(&f, &y, &m, &b, &lf, &le);
            prop_assert!((lhs - rhs).abs() < 1e-8 * (1.0 + rhs.abs()), "{lhs} vs {rhs}");
        }
    }
}
