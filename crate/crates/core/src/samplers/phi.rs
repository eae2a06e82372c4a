//! Unconstrained coordinates for GARCH parameters.
//!
//! With `ψ1 = innov + lag`, `ψ2 = intercept / (1 - ψ1)` (the unconditional
//! variance) and `ψ3 = lag / ψ1`, the coordinates are
//! `φ = (logit ψ1, ln ψ2, logit ψ3)`. Under the unit-variance restriction
//! `ψ2 = 1` and `φ2` is dropped.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::GarchParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiCoords {
    pub phi1: f64,
    pub phi2: f64,
    pub phi3: f64,
    /// Unit-variance mode: `phi2` is fixed at zero and not proposed.
    pub constrained: bool,
}

fn logit(p: f64) -> f64 {
    p.ln() - (1.0 - p).ln()
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl PhiCoords {
    pub fn dim(&self) -> usize {
        if self.constrained {
            2
        } else {
            3
        }
    }

    /// The free coordinates as a vector of length [`dim`](Self::dim).
    pub fn to_vector(&self) -> DVector<f64> {
        if self.constrained {
            DVector::from_vec(vec![self.phi1, self.phi3])
        } else {
            DVector::from_vec(vec![self.phi1, self.phi2, self.phi3])
        }
    }

    pub fn from_vector(v: &DVector<f64>, constrained: bool) -> Self {
        if constrained {
            PhiCoords { phi1: v[0], phi2: 0.0, phi3: v[1], constrained }
        } else {
            PhiCoords { phi1: v[0], phi2: v[1], phi3: v[2], constrained }
        }
    }

    /// `(ψ1, ψ2, ψ3)`.
    pub fn psi(&self) -> (f64, f64, f64) {
        let psi2 = if self.constrained { 1.0 } else { self.phi2.exp() };
        (logistic(self.phi1), psi2, logistic(self.phi3))
    }
}

pub fn garch_to_phi(p: &GarchParams, constrained: bool) -> Result<PhiCoords> {
    let psi1 = p.innov_coef + p.lag_coef;
    if !(psi1 > 0.0 && psi1 < 1.0) {
        return Err(Error::domain(format!("innov + lag = {psi1} is not strictly inside (0, 1)")));
    }
    let psi3 = p.lag_coef / psi1;
    if !(psi3 > 0.0 && psi3 < 1.0) {
        return Err(Error::domain(format!("lag share {psi3} is not strictly inside (0, 1)")));
    }
    let phi2 = if constrained {
        if !p.is_unit_variance() {
            return Err(Error::domain("constrained coordinates need unit unconditional variance"));
        }
        0.0
    } else {
        let psi2 = p.intercept / (1.0 - psi1);
        if !(psi2 > 0.0) {
            return Err(Error::domain("intercept must be positive"));
        }
        psi2.ln()
    };
    Ok(PhiCoords { phi1: logit(psi1), phi2, phi3: logit(psi3), constrained })
}

/// Decodes coordinates; fails only where floating point rounds onto the
/// boundary of the stable region.
pub fn phi_to_garch(c: &PhiCoords) -> Result<GarchParams> {
    let (psi1, psi2, psi3) = c.psi();
    let lag = psi1 * psi3;
    let innov = psi1 * (1.0 - psi3);
    let intercept = if c.constrained { 1.0 - innov - lag } else { psi2 * (1.0 - psi1) };
    let p = GarchParams { intercept, innov_coef: innov, lag_coef: lag, leverage: None };
    p.validate()?;
    if !(intercept > 0.0) {
        return Err(Error::domain("decoded intercept is not positive"));
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_example() {
        let p = GarchParams::new(0.06, 0.04, 0.90).unwrap();
        let c = garch_to_phi(&p, false).unwrap();
        let (psi1, psi2, psi3) = c.psi();
        assert!((psi1 - 0.94).abs() < 1e-12);
        assert!((psi2 - 1.0).abs() < 1e-12);
        assert!((psi3 - 0.90 / 0.94).abs() < 1e-12);
        // Independent evaluation of the logits.
        assert!((c.phi1 - (0.94f64 / 0.06).ln()).abs() < 1e-12);
        assert!((c.phi1 - 2.751535313).abs() < 1e-8);
        assert!(c.phi2.abs() < 1e-12);
        assert!((c.phi3 - (0.90f64 / 0.04).ln()).abs() < 1e-12);
        assert!((c.phi3 - 3.113515309).abs() < 1e-8);
    }

    #[test]
    fn origin_decodes_to_midpoints() {
        let c = PhiCoords { phi1: 0.0, phi2: 0.0, phi3: 0.0, constrained: false };
        let p = phi_to_garch(&c).unwrap();
        assert!((p.intercept - 0.5).abs() < 1e-15);
        assert!((p.innov_coef - 0.25).abs() < 1e-15);
        assert!((p.lag_coef - 0.25).abs() < 1e-15);
        let pc = phi_to_garch(&PhiCoords { constrained: true, ..c }).unwrap();
        assert!(pc.is_unit_variance());
    }

    #[test]
    fn boundary_is_rejected() {
        assert!(garch_to_phi(&GarchParams::new(1.0, 0.0, 0.0).unwrap(), false).is_err());
        assert!(garch_to_phi(&GarchParams::new(0.1, 0.5, 0.0).unwrap(), false).is_err());
        assert!(garch_to_phi(&GarchParams::new(0.1, 0.0, 0.5).unwrap(), false).is_err());
        assert!(garch_to_phi(&GarchParams::new(0.5, 0.1, 0.5).unwrap(), true).is_err());
    }

    #[test]
    fn thousand_random_round_trips() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let psi1 = rng.random_range(0.01..0.99);
            let psi3 = rng.random_range(0.01..0.99);
            let v = rng.random_range(0.05..5.0);
            let p = GarchParams::new(v * (1.0 - psi1), psi1 * (1.0 - psi3), psi1 * psi3).unwrap();
            let c = garch_to_phi(&p, false).unwrap();
            let back = garch_to_phi(&phi_to_garch(&c).unwrap(), false).unwrap();
            worst = worst.max((c.phi1 - back.phi1).abs()).max((c.phi2 - back.phi2).abs()).max((c.phi3 - back.phi3).abs());
        }
        assert!(worst < 1e-12, "max error {worst}");
    }

    proptest! {
        #[test]
        fn encode_decode_is_identity(phi1 in -6.0f64..6.0, phi2 in -4.0f64..4.0, phi3 in -6.0f64..6.0, constrained: bool) {
            let c = PhiCoords { phi1, phi2: if constrained { 0.0 } else { phi2 }, phi3, constrained };
            let p = phi_to_garch(&c).unwrap();
            let back = garch_to_phi(&p, constrained).unwrap();
            prop_assert!((back.phi1 - c.phi1).abs() < 1e-8);
            prop_assert!((back.phi2 - c.phi2).abs() < 1e-8);
            prop_assert!((back.phi3 - c.phi3).abs() < 1e-8);
            let v = c.to_vector();
            prop_assert_eq!(PhiCoords::from_vector(&v, constrained), c);
        }
    }
}
