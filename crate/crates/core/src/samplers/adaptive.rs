//! Adaptive random-walk Metropolis.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_JITTER: f64 = 1e-10;
/// Draws observed before the empirical covariance replaces the initial one.
pub const DEFAULT_WARMUP: usize = 100;
pub const INITIAL_PROPOSAL_SD: f64 = 0.01;

/// Gaussian random-walk proposal whose covariance tracks the history of
/// the chain: `(2.38² / d) S + jitter I`, with `S` the sample covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveProposal {
    pub mean: DVector<f64>,
    /// Current proposal covariance.
    pub covariance: DMatrix<f64>,
    pub count: usize,
    pub jitter: f64,
    pub scale: f64,
    pub warmup: usize,
    /// Sum of squared deviations from the running mean.
    scatter: DMatrix<f64>,
    initial_var: f64,
}

impl AdaptiveProposal {
    pub fn new(dim: usize) -> Self {
        Self::with_settings(dim, DEFAULT_WARMUP, INITIAL_PROPOSAL_SD, DEFAULT_JITTER)
    }

    pub fn with_settings(dim: usize, warmup: usize, initial_sd: f64, jitter: f64) -> Self {
        let initial_var = initial_sd * initial_sd;
        AdaptiveProposal {
            mean: DVector::zeros(dim),
            covariance: DMatrix::identity(dim, dim) * initial_var,
            count: 0,
            jitter,
            scale: 2.38 * 2.38 / dim as f64,
            warmup,
            scatter: DMatrix::zeros(dim, dim),
            initial_var,
        }
    }

    /// Batch construction from a history of at least two draws, with the
    /// empirical covariance in force immediately.
    pub fn from_history(history: &[DVector<f64>], jitter: f64) -> Result<Self> {
        let dim = history.first().map(|h| h.len()).unwrap_or(0);
        if history.len() < 2 || dim == 0 {
            return Err(Error::domain("adaptation needs at least two draws"));
        }
        let mut p = Self::with_settings(dim, 0, INITIAL_PROPOSAL_SD, jitter);
        for h in history {
            p.observe(h);
        }
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Sample covariance of the observed draws (divisor `count - 1`).
    pub fn sample_covariance(&self) -> DMatrix<f64> {
        if self.count < 2 {
            DMatrix::zeros(self.dim(), self.dim())
        } else {
            &self.scatter / (self.count - 1) as f64
        }
    }

    /// Streaming (Welford) update with a new draw.
    pub fn observe(&mut self, x: &DVector<f64>) {
        self.count += 1;
        let delta = x - &self.mean;
        self.mean += &delta / self.count as f64;
        let delta2 = x - &self.mean;
        self.scatter += &delta * delta2.transpose();
        // Keep the accumulated scatter exactly symmetric.
        self.scatter = (&self.scatter + self.scatter.transpose()) * 0.5;
        let d = self.dim();
        self.covariance = if self.count >= self.warmup.max(2) {
            self.sample_covariance() * self.scale + DMatrix::identity(d, d) * self.jitter
        } else {
            DMatrix::identity(d, d) * self.initial_var
        };
    }

    /// Draws `current + N(0, covariance)`.
    pub fn propose<R: Rng + ?Sized>(&self, current: &DVector<f64>, rng: &mut R) -> Result<DVector<f64>> {
        let chol = self.covariance.clone().cholesky().ok_or_else(|| Error::numeric("proposal covariance is not positive definite"))?;
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        Ok(current + chol.l() * z)
    }
}

/// Accept with probability `min(1, exp(log_ratio))`. Always consumes one
/// uniform so the stream position does not depend on the outcome.
pub fn metropolis_accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    let u: f64 = rng.random();
    if log_ratio.is_nan() {
        return false;
    }
    u.ln() < log_ratio
}

/// One random-walk Metropolis step on `log_target`. Returns the new state,
/// its log target and whether the move was accepted.
pub fn mh_step<R, F>(
    current: &DVector<f64>,
    current_log_target: f64,
    proposal: &AdaptiveProposal,
    log_target: F,
    rng: &mut R,
) -> Result<(DVector<f64>, f64, bool)>
where
    R: Rng + ?Sized,
    F: FnOnce(&DVector<f64>) -> f64,
{
    let candidate = proposal.propose(current, rng)?;
    let lt = log_target(&candidate);
    if metropolis_accept(lt - current_log_target, rng) {
        Ok((candidate, lt, true))
    } else {
        Ok((current.clone(), current_log_target, false))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn scale_for_three_dimensions() {
        let p = AdaptiveProposal::new(3);
        assert!((p.scale - 1.888133333).abs() < 1e-8);
    }

    #[test]
    fn constant_history_gives_jitter() {
        let h = vec![DVector::from_vec(vec![0.3, -1.0]); 10];
        let p = AdaptiveProposal::from_history(&h, 1e-10).unwrap();
        let expected = DMatrix::identity(2, 2) * 1e-10;
        assert!((p.covariance - expected).abs().max() < 1e-24);
    }

    #[test]
    fn streaming_matches_batch() {
        use rand::Rng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let h: Vec<DVector<f64>> = (0..500).map(|_| DVector::from_fn(3, |i, _| rng.random::<f64>() * (i + 1) as f64 + i as f64)).collect();
        let p = AdaptiveProposal::from_history(&h, 1e-10).unwrap();
        let n = h.len() as f64;
        let mean = h.iter().fold(DVector::zeros(3), |a, x| a + x) / n;
        let mut s = DMatrix::zeros(3, 3);
        for x in &h {
            let d = x - &mean;
            s += &d * d.transpose();
        }
        s /= n - 1.0;
        let batch = s * (2.38 * 2.38 / 3.0) + DMatrix::identity(3, 3) * 1e-10;
        assert!((p.covariance - batch).abs().max() < 1e-10);
        assert!((p.mean - mean).abs().max() < 1e-12);
    }

    #[test]
    fn warmup_keeps_initial_covariance() {
        let mut p = AdaptiveProposal::new(2);
        for i in 0..99 {
            p.observe(&DVector::from_vec(vec![i as f64, 0.0]));
        }
        assert_eq!(p.covariance, DMatrix::identity(2, 2) * 1e-4);
        p.observe(&DVector::from_vec(vec![99.0, 1.0]));
        assert!(p.covariance[(0, 0)] > 1.0);
    }

    #[test]
    fn pinned_ratio_acceptance_rate() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let n = 10_000;
        let accepted = (0..n).filter(|_| metropolis_accept(0.5f64.ln(), &mut rng)).count();
        let rate = accepted as f64 / n as f64;
        assert!((rate - 0.5).abs() < 0.02, "rate {rate}");
    }

    #[test]
    fn zero_width_proposal_always_accepts() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let p = AdaptiveProposal::with_settings(2, 1000, 0.0, 0.0);
        let x = DVector::from_vec(vec![1.0, 2.0]);
        // A zero covariance has no Cholesky factor; use a vanishing one instead.
        let p = AdaptiveProposal { covariance: DMatrix::identity(2, 2) * 1e-300, ..p };
        let target = |v: &DVector<f64>| -v.norm_squared();
        for _ in 0..100 {
            let (_, _, acc) = mh_step(&x, target(&x), &p, target, &mut rng).unwrap();
            assert!(acc);
        }
    }

    #[test]
    fn two_point_chain_has_the_target_law() {
        // Target on {0, 1} with masses 1/4 and 3/4; the random walk moves
        // the continuous coordinate and the state is its sign. Start many
        // short independent chains from the stationary law and check the
        // end-state frequencies with a chi-square test.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let log_mass = [0.25f64.ln(), 0.75f64.ln()];
        // Piecewise constant density on [-1, 0) and [0, 1).
        let log_target = move |v: &DVector<f64>| {
            let x = v[0];
            if (-1.0..0.0).contains(&x) {
                log_mass[0]
            } else if (0.0..1.0).contains(&x) {
                log_mass[1]
            } else {
                f64::NEG_INFINITY
            }
        };
        let p = AdaptiveProposal::with_settings(1, usize::MAX, 0.7, 0.0);
        let chains = 4000;
        let mut counts = [0usize; 2];
        use rand::Rng;
        for _ in 0..chains {
            let x0 = if rng.random::<f64>() < 0.25 { -rng.random::<f64>() } else { rng.random::<f64>() };
            let mut x = DVector::from_element(1, x0);
            let mut lt = log_target(&x);
            for _ in 0..5 {
                let (nx, nlt, _) = mh_step(&x, lt, &p, log_target, &mut rng).unwrap();
                x = nx;
                lt = nlt;
            }
            counts[usize::from(x[0] >= 0.0)] += 1;
        }
        let expected = [chains as f64 * 0.25, chains as f64 * 0.75];
        let chi2: f64 = (0..2).map(|i| (counts[i] as f64 - expected[i]).powi(2) / expected[i]).sum();
        // 99% quantile of chi-square with one degree of freedom.
        assert!(chi2 < 6.635, "counts {counts:?}");
    }
}
