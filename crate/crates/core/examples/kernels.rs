//! Factor-model likelihood and factor posterior through the low-rank kernels,
//! checked against a dense Gaussian density.

use factor_garch::kernels::{factor_posterior, marginal_loglik};
use nalgebra::{DMatrix, DVector};

fn main() -> factor_garch::Result<()> {
    let loadings = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.6, 1.0, -0.3, 0.8, 0.9, 0.2]);
    let factor_vars = DVector::from_vec(vec![1.5, 0.7]);
    let idio_vars = DVector::from_vec(vec![0.2, 0.3, 0.25, 0.4]);
    let mean_shift = DVector::from_vec(vec![0.1, -0.05]);
    let y = DVector::from_vec(vec![0.8, 0.1, -0.4, 1.1]);

    let ll = marginal_loglik(&y, &mean_shift, &loadings, &factor_vars, &idio_vars)?;

    let cov = &loadings * DMatrix::from_diagonal(&factor_vars) * loadings.transpose() + DMatrix::from_diagonal(&idio_vars);
    let r = &y - &loadings * &mean_shift;
    let dense =
        -0.5 * (4.0 * (2.0 * std::f64::consts::PI).ln() + cov.determinant().ln() + (r.transpose() * cov.try_inverse().unwrap() * &r)[0]);
    println!("log-likelihood: low rank {ll:.12}, dense {dense:.12}");

    let post = factor_posterior(&y, &mean_shift, &loadings, &factor_vars, &idio_vars)?;
    println!("factor posterior mean {:.4}", post.mean.transpose());
    println!("factor posterior covariance {:.4}", post.covariance());
    Ok(())
}
