//! Adaptive random-walk Metropolis for the GARCH(1,1) coefficients of a
//! single simulated series.

use factor_garch::model::GarchParams;
use factor_garch::rng::rng_from_seed;
use factor_garch::samplers::{garch_to_phi, mh_step_garch, phi_to_garch, AdaptiveProposal, GarchPrior};
use rand::Rng;
use rand_distr::StandardNormal;

fn main() -> factor_garch::Result<()> {
    let truth = GarchParams::new(0.06, 0.04, 0.90)?;
    let mut rng = rng_from_seed(5);
    let mut lambda = truth.unconditional_variance()?;
    let series: Vec<f64> = (0..2000)
        .map(|_| {
            let x = lambda.sqrt() * rng.sample::<f64, _>(StandardNormal);
            lambda = truth.step(lambda, x);
            x
        })
        .collect();

    let mut current = garch_to_phi(&GarchParams::new(0.2, 0.1, 0.7)?, false)?;
    let mut proposal = AdaptiveProposal::new(3);
    let mut accepted = 0;
    let mut kept = Vec::new();
    for it in 0..20_000 {
        let (next, acc) = mh_step_garch(&series, 0.0, &current, &proposal, GarchPrior::UniformCoefficients, &mut rng)?;
        current = next;
        accepted += usize::from(acc);
        proposal.observe(&current.to_vector());
        if it >= 5000 {
            kept.push(phi_to_garch(&current)?);
        }
    }
    let n = kept.len() as f64;
    let mean = |f: fn(&GarchParams) -> f64| kept.iter().map(f).sum::<f64>() / n;
    println!("acceptance rate {:.2}", accepted as f64 / 20_000.0);
    println!(
        "posterior means: intercept {:.4}, innov {:.4}, lag {:.4}",
        mean(|p| p.intercept),
        mean(|p| p.innov_coef),
        mean(|p| p.lag_coef)
    );
    println!("truth:           intercept 0.0600, innov 0.0400, lag 0.9000");
    Ok(())
}
