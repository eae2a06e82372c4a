//! Likelihood estimates from the fully adapted particle filter and a few
//! conditional SMC sweeps on simulated factor GARCH data.

use factor_garch::config::SimulationConfig;
use factor_garch::model::simulate;
use factor_garch::particle::{csmc_sweep, fapf_loglik, FactorPath, DEFAULT_TRUNCATION};

fn main() -> factor_garch::Result<()> {
    let sim = SimulationConfig { n_periods: 150, ..SimulationConfig::default() };
    let spec = sim.to_spec()?;
    let data = simulate(&spec, sim.seed)?;

    for m in [5, 10, 50, 200] {
        let lls: Vec<f64> = (0..20).map(|s| fapf_loglik(&data, &spec, m, s)).collect::<Result<_, _>>()?;
        let mean = lls.iter().sum::<f64>() / lls.len() as f64;
        let sd = (lls.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (lls.len() - 1) as f64).sqrt();
        println!("M = {m:>3}: log-likelihood {mean:.3} (sd over seeds {sd:.3})");
    }

    let truth = data.true_factors.clone().expect("simulated data carries its factors");
    let mut path = FactorPath::from_values(truth.clone(), &spec, &data)?;
    for sweep in 0..5 {
        path = csmc_sweep(&data, &spec, &path, 10, DEFAULT_TRUNCATION, 100 + sweep)?;
        let err = (&path.values - &truth).norm() / truth.norm();
        println!("sweep {sweep}: relative distance from the simulated factors {err:.3}");
    }
    Ok(())
}
