use rand::Rng;
use rand_distr::StandardNormal;

/// Conjugate draw of a GARCH-M leverage `τ` under a N(0, 1) prior, given
/// `f_t ~ N(τ λ_t, λ_t)`: the posterior is `N(v Σ f_t, v)` with
/// `v = 1 / (1 + Σ λ_t)`.
pub fn sample_leverage<R: Rng + ?Sized>(factor_path: &[f64], variance_path: &[f64], rng: &mut R) -> f64 {
    let (m, v) = leverage_posterior(factor_path, variance_path);
    let z: f64 = rng.sample(StandardNormal);
    m + v.sqrt() * z
}

/// Posterior mean and variance of the leverage.
pub(crate) fn leverage_posterior(factor_path: &[f64], variance_path: &[f64]) -> (f64, f64) {
    let v = 1.0 / (1.0 + variance_path.iter().sum::<f64>());
    (v * factor_path.iter().sum::<f64>(), v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_variances() {
        let f = [0.5, -0.2, 1.1, 0.4];
        let (m, v) = leverage_posterior(&f, &[1.0; 4]);
        assert!((v - 0.2).abs() < 1e-15);
        assert!((m - 1.8 / 5.0).abs() < 1e-15);
        assert_eq!(leverage_posterior(&[0.0; 3], &[2.0, 1.0, 0.5]).0, 0.0);
    }
}
