use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inverse-Gamma prior given by its mean and degrees of freedom.
///
/// Shape is `df / 2` and scale `mean (df / 2 - 1)`, so the prior mean is
/// `mean`; this needs `df > 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IgPrior {
    pub prior_mean: f64,
    pub prior_df: f64,
}

impl IgPrior {
    pub fn new(prior_mean: f64, prior_df: f64) -> Result<Self> {
        if !(prior_mean > 0.0 && prior_mean.is_finite()) {
            return Err(Error::domain("inverse-Gamma prior mean must be positive"));
        }
        if !(prior_df > 2.0) {
            return Err(Error::domain("inverse-Gamma prior needs more than 2 degrees of freedom"));
        }
        Ok(IgPrior { prior_mean, prior_df })
    }

    pub fn shape(&self) -> f64 {
        self.prior_df / 2.0
    }

    pub fn scale(&self) -> f64 {
        self.prior_mean * (self.prior_df / 2.0 - 1.0)
    }

    /// Shape and scale after observing residuals with the given sum of squares.
    pub fn posterior(&self, n_obs: usize, sum_sq: f64) -> (f64, f64) {
        (self.shape() + n_obs as f64 / 2.0, self.scale() + sum_sq / 2.0)
    }

    pub fn log_density(&self, x: f64) -> f64 {
        ig_log_density(x, self.shape(), self.scale())
    }
}

pub(crate) fn ig_log_density(x: f64, shape: f64, scale: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NEG_INFINITY;
    }
    shape * scale.ln() - statrs::function::gamma::ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

pub(crate) fn draw_inverse_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> Result<f64> {
    let g = Gamma::new(shape, 1.0 / scale).map_err(|e| Error::domain(format!("inverse-Gamma({shape}, {scale}): {e}")))?;
    Ok(1.0 / g.sample(rng))
}

/// Conjugate draw of each constant idiosyncratic variance from its
/// residual column (T x N).
pub fn sample_idio_variance_constant<R: Rng + ?Sized>(residuals: &DMatrix<f64>, prior: &IgPrior, rng: &mut R) -> Result<DVector<f64>> {
    let t = residuals.nrows();
    let mut out = DVector::zeros(residuals.ncols());
    for (i, col) in residuals.column_iter().enumerate() {
        let (a, b) = prior.posterior(t, col.norm_squared());
        out[i] = draw_inverse_gamma(a, b, rng)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::StandardNormal;

    #[test]
    fn prior_mean_is_preserved() {
        let p = IgPrior::new(0.3, 10.0).unwrap();
        assert!((p.scale() / (p.shape() - 1.0) - 0.3).abs() < 1e-15);
        assert!(IgPrior::new(0.3, 2.0).is_err());
        assert!(IgPrior::new(-1.0, 5.0).is_err());
    }

    #[test]
    fn no_data_draws_from_prior() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let p = IgPrior::new(0.5, 20.0).unwrap();
        let empty = DMatrix::zeros(0, 1);
        let n = 20000;
        let draws: Vec<f64> = (0..n).map(|_| sample_idio_variance_constant(&empty, &p, &mut rng).unwrap()[0]).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        // Prior sd is mean / sqrt(df/2 - 2) = 0.5 / sqrt(8).
        let se = 0.5 / 8f64.sqrt() / (n as f64).sqrt();
        assert!((mean - 0.5).abs() < 4.0 * se, "mean {mean}");
    }

    #[test]
    fn large_sample_concentrates_on_residual_variance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let t = 100_000;
        let v: f64 = 0.7;
        let res = DMatrix::from_fn(t, 1, |_, _| v.sqrt() * rng.sample::<f64, _>(StandardNormal));
        let p = IgPrior::new(0.1, 5.0).unwrap();
        let d = sample_idio_variance_constant(&res, &p, &mut rng).unwrap()[0];
        assert!((d - v).abs() / v < 0.02, "draw {d}");
    }

    #[test]
    fn dogmatic_prior_ignores_residuals() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let res = DMatrix::from_element(50, 2, 3.0);
        let p = IgPrior::new(0.25, 1e8).unwrap();
        let d = sample_idio_variance_constant(&res, &p, &mut rng).unwrap();
        for x in d.iter() {
            assert!((x - 0.25).abs() < 1e-3);
        }
    }
}
