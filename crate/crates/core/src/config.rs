//! TOML configuration files.
//!
//! A file has an optional `[run]` table whose keys are the [`RunConfig`]
//! fields and an optional `[simulation]` table describing a data-generating
//! model for the `simulate` subcommand.
//!
//! ```toml
//! [run]
//! n_iterations = 20000
//! burn_in = 2000
//! particles = 10
//! identification = "invariant"
//! garch_prior = "flat_phi"
//!
//! [simulation]
//! n_periods = 200
//! n_series = 5
//! n_factors = 2
//! idio_var = 0.02
//! ```

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::driver::RunConfig;
use crate::error::{Error, Result};
use crate::model::{GarchParams, Identification, IdioMode, IdioSpec, MeanMode, ModelSpec};
use crate::rng::{derive_seed, rng_from_seed};
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub run: RunConfig,
    pub simulation: Option<SimulationConfig>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises to TOML")
    }
}

/// Data-generating model for simulated panels.
///
/// Factors follow GARCH(1,1) with the given coefficients; the intercept
/// defaults to `1 - factor_innov - factor_lag` so factors have unit
/// unconditional variance. Loadings default to [`planted_loadings`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub seed: u64,
    pub n_periods: usize,
    pub n_series: usize,
    pub n_factors: usize,
    pub factor_innov: f64,
    pub factor_lag: f64,
    pub factor_intercept: Option<f64>,
    pub mean_mode: MeanMode,
    pub leverage: f64,
    pub idio_mode: IdioMode,
    /// Constant idiosyncratic variance, or the unconditional variance of GARCH errors.
    pub idio_var: f64,
    pub idio_innov: f64,
    pub idio_lag: f64,
    /// Row-major N x K loadings.
    pub loadings: Option<Vec<Vec<f64>>>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            seed: 1,
            n_periods: 200,
            n_series: 5,
            n_factors: 2,
            factor_innov: 0.04,
            factor_lag: 0.90,
            factor_intercept: None,
            mean_mode: MeanMode::ZeroMean,
            leverage: 0.0,
            idio_mode: IdioMode::Constant,
            idio_var: 0.02,
            idio_innov: 0.05,
            idio_lag: 0.90,
            loadings: None,
        }
    }
}

/// Default simulation loadings: the identity in the first K rows, then
/// unit-length rows with directions from a fixed pseudo-random stream.
/// Row `i` does not depend on N, so designs of different sizes nest.
pub fn planted_loadings(n: usize, k: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n, k);
    for i in 0..n {
        if i < k {
            out[(i, i)] = 1.0;
            continue;
        }
        let mut rng = rng_from_seed(derive_seed(LOADINGS_STREAM, &[i as u64, k as u64]));
        let z = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
        out.row_mut(i).copy_from(&(z.normalize()).transpose());
    }
    out
}

const LOADINGS_STREAM: u64 = 0x10AD;

impl SimulationConfig {
    pub fn to_spec(&self) -> Result<ModelSpec> {
        let (n, k) = (self.n_series, self.n_factors);
        let mut g = match self.factor_intercept {
            Some(c) => GarchParams::new(c, self.factor_innov, self.factor_lag)?,
            None => GarchParams::unit_variance(self.factor_innov, self.factor_lag)?,
        };
        if self.mean_mode == MeanMode::GarchInMean {
            g = g.with_leverage(self.leverage);
        }
        let loadings = match &self.loadings {
            None => planted_loadings(n, k),
            Some(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != k) {
                    return Err(Error::Config(format!("simulation.loadings must be {n} rows of {k} values")));
                }
                DMatrix::from_fn(n, k, |i, j| rows[i][j])
            }
        };
        let idio = match self.idio_mode {
            IdioMode::Constant => IdioSpec::Constant(DVector::from_element(n, self.idio_var)),
            IdioMode::Garch => {
                let c = self.idio_var * (1.0 - self.idio_innov - self.idio_lag);
                IdioSpec::Garch(vec![GarchParams::new(c, self.idio_innov, self.idio_lag)?; n])
            }
        };
        let mut spec = ModelSpec {
            n_series: n,
            n_factors: k,
            n_periods: self.n_periods,
            factor_garch: vec![g; k],
            idio,
            loadings,
            identification: Identification::Invariant,
            mean_mode: self.mean_mode,
        };
        // Simulation only needs some identification label the parameters satisfy.
        for ident in [Identification::Invariant, Identification::TriangularUnitVariance, Identification::TriangularUnitDiag] {
            spec.identification = ident;
            if spec.validate().is_ok() {
                break;
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}
