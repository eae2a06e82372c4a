//! Loadings updates under the two identification schemes.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::Identification;

/// Prior variance of each free triangular loading.
pub const DEFAULT_PRIOR_VAR: f64 = 1.0;
/// Default prior weight in the invariant loadings posterior.
pub const DEFAULT_C_LAMBDA: f64 = 1.0;

fn standard_normals<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Draws from `N(P⁻¹ b, P⁻¹)` given the precision `P` and `b`.
fn draw_from_precision<R: Rng + ?Sized>(precision: DMatrix<f64>, b: &DVector<f64>, rng: &mut R) -> Result<DVector<f64>> {
    let chol = precision.cholesky().ok_or_else(|| Error::numeric("loadings posterior precision is not positive definite"))?;
    let mean = chol.solve(b);
    let z = standard_normals(b.len(), rng);
    let offset = chol.l().transpose().solve_upper_triangular(&z).ok_or_else(|| Error::numeric("singular Cholesky factor"))?;
    Ok(mean + offset)
}

/// Row-by-row conjugate regression for triangular loadings.
///
/// `factors` is T x K, `observations` and `idio_var_path` are T x N. Each
/// row's free coefficients get independent `N(0, prior_var)` priors;
/// pinned entries (unit diagonal, zeros above it) are returned exactly.
pub fn sample_loadings_triangular<R: Rng + ?Sized>(
    factors: &DMatrix<f64>,
    observations: &DMatrix<f64>,
    idio_var_path: &DMatrix<f64>,
    prior_var: f64,
    identification: Identification,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if !identification.is_triangular() {
        return Err(Error::domain("triangular sampler called under invariant identification"));
    }
    if !(prior_var > 0.0) {
        return Err(Error::domain("loadings prior variance must be positive"));
    }
    let (t_len, k) = factors.shape();
    let n = observations.ncols();
    if observations.nrows() != t_len || idio_var_path.shape() != (t_len, n) {
        return Err(Error::domain("factor, observation and variance paths disagree in shape"));
    }
    let mut out = DMatrix::zeros(n, k);
    for i in 0..n {
        let free: Vec<usize> = (0..k).filter(|&j| identification.is_free(i, j)).collect();
        let pinned_diag = !identification.unit_variance() && i < k;
        if pinned_diag {
            out[(i, i)] = 1.0;
        }
        if free.is_empty() {
            continue;
        }
        let d = free.len();
        let mut precision = DMatrix::identity(d, d) / prior_var;
        let mut b = DVector::zeros(d);
        for t in 0..t_len {
            let w = 1.0 / idio_var_path[(t, i)];
            let target = observations[(t, i)] - if pinned_diag { factors[(t, i)] } else { 0.0 };
            for (a, &ja) in free.iter().enumerate() {
                let xa = factors[(t, ja)];
                b[a] += w * xa * target;
                for (c, &jc) in free.iter().enumerate().take(a + 1) {
                    precision[(a, c)] += w * xa * factors[(t, jc)];
                }
            }
        }
        precision.fill_upper_triangle_with_lower_triangle();
        let draw = draw_from_precision(precision, &b, rng)?;
        for (a, &j) in free.iter().enumerate() {
            out[(i, j)] = draw[a];
        }
    }
    Ok(out)
}

/// Mean and covariance of one row of the invariant loadings posterior:
/// `N([(1 + c Λ) F'F]⁻¹ F'y, Λ [(1 + c Λ) F'F]⁻¹)`.
pub fn invariant_posterior(factors: &DMatrix<f64>, y: &DVector<f64>, idio_var: f64, c_lambda: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let ftf = factors.transpose() * factors;
    let inv = ftf.cholesky().ok_or_else(|| Error::numeric("F'F is singular; factors lack full column rank"))?.inverse();
    let shrink = 1.0 + c_lambda * idio_var;
    let mean = &inv * (factors.transpose() * y) / shrink;
    Ok((mean, inv * (idio_var / shrink)))
}

/// Independent row draws for the rotation-invariant loadings posterior.
pub fn sample_loadings_invariant<R: Rng + ?Sized>(
    factors: &DMatrix<f64>,
    observations: &DMatrix<f64>,
    idio_vars: &[f64],
    c_lambda: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if !(c_lambda >= 0.0) {
        return Err(Error::domain("c_lambda must be non-negative"));
    }
    let (n, k) = (observations.ncols(), factors.ncols());
    if idio_vars.len() != n || observations.nrows() != factors.nrows() {
        return Err(Error::domain("invariant loadings inputs disagree in shape"));
    }
    let mut out = DMatrix::zeros(n, k);
    for i in 0..n {
        let y = observations.column(i).into_owned();
        let (mean, cov) = invariant_posterior(factors, &y, idio_vars[i], c_lambda)?;
        let l = cov.cholesky().ok_or_else(|| Error::numeric("invariant posterior covariance is not positive definite"))?.unpack();
        let draw = mean + l * standard_normals(k, rng);
        out.row_mut(i).copy_from(&draw.transpose());
    }
    Ok(out)
}
