//! Autocorrelations and batch-means IACT of AR(1) chains with known
//! integrated autocorrelation time (1 + rho) / (1 - rho).

use factor_garch::diagnostics::{autocorrelation, iact};
use factor_garch::rng::rng_from_seed;
use rand::Rng;
use rand_distr::StandardNormal;

fn main() -> factor_garch::Result<()> {
    for rho in [0.0, 0.5, 0.9, 0.99] {
        let mut rng = rng_from_seed(3);
        let sd = (1.0f64 - rho * rho).sqrt();
        let mut x = 0.0;
        let chain: Vec<f64> = (0..200_000)
            .map(|_| {
                x = rho * x + sd * rng.sample::<f64, _>(StandardNormal);
                x
            })
            .collect();
        let acf = autocorrelation(&chain, 3)?;
        println!(
            "rho {rho:<4}: IACT {:>7.2} (exact {:>6.2}), acf[1..=3] {:.3} {:.3} {:.3}",
            iact(&chain)?,
            (1.0 + rho) / (1.0 - rho),
            acf[1],
            acf[2],
            acf[3]
        );
    }
    Ok(())
}
