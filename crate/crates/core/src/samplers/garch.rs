//! Metropolis update of one variance process's parameters.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adaptive::{mh_step, AdaptiveProposal};
use super::phi::{garch_to_phi, phi_to_garch, PhiCoords};
use crate::error::Result;
use crate::kernels::LN_2PI;
use crate::model::GarchParams;

/// Prior on the GARCH coefficients, expressed as a density on `φ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GarchPrior {
    /// Flat in `φ`: the acceptance ratio is the likelihood ratio alone.
    #[default]
    FlatPhi,
    /// Independent U[0, 1] priors on intercept, innovation and lag
    /// coefficients, restricted to the stationary region, carried to `φ`
    /// with the change-of-variables Jacobian.
    UniformCoefficients,
}

/// Log density of `c` under `prior`, including normalising constants for
/// the uniform prior. The flat prior returns zero.
pub fn log_prior_phi(c: &PhiCoords, prior: GarchPrior) -> f64 {
    match prior {
        GarchPrior::FlatPhi => 0.0,
        GarchPrior::UniformCoefficients => {
            let (psi1, psi2, psi3) = c.psi();
            // The stationary part of the unit cube has volume 1/2.
            let log_norm = 2f64.ln();
            let tails = psi3.ln() + (1.0 - psi3).ln();
            if c.constrained {
                log_norm + 2.0 * psi1.ln() + (1.0 - psi1).ln() + tails
            } else {
                if psi2 * (1.0 - psi1) > 1.0 {
                    return f64::NEG_INFINITY;
                }
                log_norm + 2.0 * psi1.ln() + 2.0 * (1.0 - psi1).ln() + psi2.ln() + tails
            }
        }
    }
}

/// `Σ_t log N(x_t; τ λ_t, λ_t)` with `λ` following the recursion driven by
/// `x` itself and started at the unconditional variance.
pub fn garch_series_loglik(series: &[f64], params: &GarchParams, leverage: f64) -> f64 {
    let Ok(mut lambda) = params.unconditional_variance() else {
        return f64::NEG_INFINITY;
    };
    let mut ll = 0.0;
    for &x in series {
        if !(lambda > 0.0) {
            return f64::NEG_INFINITY;
        }
        let r = x - leverage * lambda;
        ll -= 0.5 * (LN_2PI + lambda.ln() + r * r / lambda);
        lambda = params.step(lambda, x);
    }
    ll
}

fn log_target(series: &[f64], c: &PhiCoords, leverage: f64, prior: GarchPrior) -> f64 {
    let lp = log_prior_phi(c, prior);
    if lp == f64::NEG_INFINITY {
        return lp;
    }
    // Points whose coefficients cannot be encoded again lie on the boundary
    // in floating point and are treated as outside the support.
    match phi_to_garch(c) {
        Ok(p) if garch_to_phi(&p, c.constrained).is_ok() => lp + garch_series_loglik(series, &p, leverage),
        _ => f64::NEG_INFINITY,
    }
}

/// Random-walk Metropolis step on `φ` for a process observed through
/// `series` (a factor path or a residual series).
pub fn mh_step_garch<R: Rng + ?Sized>(
    series: &[f64],
    leverage: f64,
    current: &PhiCoords,
    proposal: &AdaptiveProposal,
    prior: GarchPrior,
    rng: &mut R,
) -> Result<(PhiCoords, bool)> {
    let constrained = current.constrained;
    let current_lt = log_target(series, current, leverage, prior);
    let (v, _, accepted) = mh_step(
        &current.to_vector(),
        current_lt,
        proposal,
        |v: &DVector<f64>| log_target(series, &PhiCoords::from_vector(v, constrained), leverage, prior),
        rng,
    )?;
    Ok((if accepted { PhiCoords::from_vector(&v, constrained) } else { *current }, accepted))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepted_points_can_be_encoded_again() {
        for constrained in [false, true] {
            for i in 0..2000 {
                let x = 30.0 + i as f64 * 0.005;
                for c in [
                    PhiCoords { phi1: 0.5, phi2: 0.0, phi3: x, constrained },
                    PhiCoords { phi1: 0.5, phi2: 0.0, phi3: -x, constrained },
                    PhiCoords { phi1: x, phi2: 0.0, phi3: 0.5, constrained },
                ] {
                    if log_target(&[0.1, -0.2], &c, 0.0, GarchPrior::FlatPhi).is_finite() {
                        assert!(garch_to_phi(&phi_to_garch(&c).unwrap(), constrained).is_ok(), "{c:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn series_loglik_matches_direct_sum() {
        let p = GarchParams::new(0.1, 0.2, 0.5).unwrap();
        let xs = [0.3, -1.2, 0.8, 2.0];
        let mut lambda = 0.1 / 0.3;
        let mut ll = 0.0;
        for x in xs {
            ll += -0.5 * (2.0 * std::f64::consts::PI * lambda).ln() - (x - 0.5 * lambda).powi(2) / (2.0 * lambda);
            lambda = 0.1 + 0.2 * x * x + 0.5 * lambda;
        }
        assert!((garch_series_loglik(&xs, &p, 0.5) - ll).abs() < 1e-12);
    }

    fn quadrature_mass(constrained: bool) -> f64 {
        // Integrate the prior density over a fine grid in φ.
        let h = 0.1;
        let range: Vec<f64> = (-150..=150).map(|i| i as f64 * h).collect();
        let mut total = 0.0;
        for &a in &range {
            for &c in &range {
                if constrained {
                    let pc = PhiCoords { phi1: a, phi2: 0.0, phi3: c, constrained };
                    total += log_prior_phi(&pc, GarchPrior::UniformCoefficients).exp() * h * h;
                } else {
                    for b in (-100..=160).map(|i| i as f64 * h) {
                        let pc = PhiCoords { phi1: a, phi2: b, phi3: c, constrained };
                        total += log_prior_phi(&pc, GarchPrior::UniformCoefficients).exp() * h * h * h;
                    }
                }
            }
        }
        total
    }

    #[test]
    fn uniform_prior_integrates_to_one() {
        assert!((quadrature_mass(true) - 1.0).abs() < 1e-3);
        assert!((quadrature_mass(false) - 1.0).abs() < 1e-2);
    }

    #[test]
    fn uniform_prior_rejects_large_intercepts() {
        let c = garch_to_phi(&GarchParams::new(1.5, 0.1, 0.5).unwrap(), false).unwrap();
        assert_eq!(log_prior_phi(&c, GarchPrior::UniformCoefficients), f64::NEG_INFINITY);
    }
}
