//! Choosing the number of factors by reversible jump. Preliminary fixed-k
//! runs supply the independence proposals for each model.

use factor_garch::config::SimulationConfig;
use factor_garch::driver::RunConfig;
use factor_garch::experiments::select_k;
use factor_garch::model::{simulate, Identification};
use factor_garch::samplers::GarchPrior;

fn main() -> factor_garch::Result<()> {
    let sim = SimulationConfig { n_factors: 2, ..SimulationConfig::default() };
    let data = simulate(&sim.to_spec()?, sim.seed)?;
    let config = RunConfig {
        n_iterations: 3000,
        burn_in: 500,
        n_factors: 1,
        identification: Identification::TriangularUnitVariance,
        garch_prior: GarchPrior::UniformCoefficients,
        ig_prior_mean: 0.05,
        k_max: 3,
        seed: 8,
        ..RunConfig::default()
    };
    let selection = select_k(&data, &config, None)?;
    for (k, f) in selection.k_frequencies.iter().enumerate() {
        println!("P(k = {}) ~ {f:.3}", k + 1);
    }
    println!("modal k = {} (simulated with 2)", selection.modal_k());
    Ok(())
}
