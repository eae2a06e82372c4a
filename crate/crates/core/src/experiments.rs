//! Simulation studies and factor-count selection.
//!
//! [`Experiment`] simulates replicated datasets from a design and estimates
//! each one; [`sweep_table`] varies one setting to produce the efficiency
//! tables (median or maximum IACT per parameter group, pooled over
//! replications). [`select_k`] runs the preliminary fixed-`k` chains, fits
//! the reversible-jump proposals and runs the model-choice chain.

use std::path::Path;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SimulationConfig;
use crate::diagnostics::{column_iacts, summarise_iacts, DrawStore, GroupIact, TABLE_GROUPS};
use crate::driver::{initial_spec, run_chain, run_chain_rj, RunConfig};
use crate::error::{Error, Result};
use crate::model::{simulate, Dataset, Identification, ModelSpec};
use crate::rjmcmc::{fit_proposals, ModelProposal};
use crate::rng::{derive_seed, tag};
use crate::samplers::GarchPrior;

/// Replicated estimation on simulated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub design: SimulationConfig,
    pub run: RunConfig,
    pub replications: usize,
    pub seed: u64,
}

impl Experiment {
    /// T = 200, K = 2, N = 5, GARCH (0.04, 0.90) with unit variance,
    /// idiosyncratic variance 0.02, M = 10, invariant loadings.
    pub fn simulated_design(n_iterations: usize, burn_in: usize) -> Self {
        Experiment {
            design: SimulationConfig::default(),
            run: RunConfig {
                n_iterations,
                burn_in,
                particles: 10,
                n_factors: 2,
                identification: Identification::Invariant,
                garch_prior: GarchPrior::UniformCoefficients,
                ig_prior_mean: 0.05,
                ig_prior_df: 4.0,
                ..RunConfig::default()
            },
            replications: 5,
            seed: 2013,
        }
    }

    pub fn true_spec(&self) -> Result<ModelSpec> {
        self.design.to_spec()
    }

    /// Dataset of replication `rep`; it does not depend on the run settings.
    pub fn dataset(&self, rep: usize) -> Result<Dataset> {
        simulate(&self.true_spec()?, derive_seed(self.seed, &[tag::DATA, rep as u64]))
    }

    pub fn replication_config(&self, rep: usize) -> RunConfig {
        RunConfig { seed: derive_seed(self.seed, &[tag::CHAIN, rep as u64]), ..self.run.clone() }
    }

    pub fn run_replication(&self, rep: usize) -> Result<DrawStore> {
        run_chain(&self.dataset(rep)?, &self.replication_config(rep))
    }

    /// Runs all replications in parallel.
    pub fn run(&self) -> Result<Vec<DrawStore>> {
        (0..self.replications).into_par_iter().map(|r| self.run_replication(r)).collect()
    }
}

/// Group IACT summaries pooled over the columns of several stores.
pub fn pooled_group_iacts(stores: &[DrawStore]) -> Vec<GroupIact> {
    let all = stores.par_iter().map(column_iacts).collect::<Vec<_>>();
    summarise_iacts(all.into_iter().flatten())
}

/// The setting varied across the rows of an efficiency table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Varied {
    Particles,
    NSeries,
    IdioVar,
}

impl Varied {
    pub fn column_name(self) -> &'static str {
        match self {
            Varied::Particles => "M",
            Varied::NSeries => "N",
            Varied::IdioVar => "idio_var",
        }
    }

    pub fn apply(self, base: &Experiment, value: f64) -> Experiment {
        let mut e = base.clone();
        match self {
            Varied::Particles => e.run.particles = value as usize,
            Varied::NSeries => e.design.n_series = value as usize,
            Varied::IdioVar => e.design.idio_var = value,
        }
        e
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub setting: f64,
    pub particles: usize,
    pub groups: Vec<GroupIact>,
}

impl TableRow {
    pub fn group(&self, name: &str) -> Option<&GroupIact> {
        self.groups.iter().find(|g| g.group == name)
    }
}

/// Runs `base` once per value of the varied setting.
pub fn sweep_table(base: &Experiment, varied: Varied, values: &[f64]) -> Result<Vec<TableRow>> {
    values
        .iter()
        .map(|&v| {
            let e = varied.apply(base, v);
            info!("{} = {v}: {} replications", varied.column_name(), e.replications);
            let stores = e.run()?;
            Ok(TableRow { setting: v, particles: e.run.particles, groups: pooled_group_iacts(&stores) })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableStat {
    Median,
    Max,
    /// Particles times the median IACT.
    ComputeTime,
}

/// Writes one row per setting with a column per table group.
pub fn write_table(path: impl AsRef<Path>, varied: Varied, rows: &[TableRow], stat: TableStat) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let header: Vec<String> = std::iter::once(varied.column_name().to_string())
        .chain(TABLE_GROUPS.iter().map(|g| crate::diagnostics::group_label(g).to_string()))
        .collect();
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.setting.to_string()];
        for g in TABLE_GROUPS {
            rec.push(match r.group(g) {
                None => String::new(),
                Some(s) => {
                    let v = match stat {
                        TableStat::Median => s.median,
                        TableStat::Max => s.max,
                        TableStat::ComputeTime => s.median * r.particles as f64,
                    };
                    format!("{v:.3}")
                }
            });
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// A preliminary fixed-`k` run.
#[derive(Debug, Clone, PartialEq)]
pub struct PreliminaryRun {
    pub template: ModelSpec,
    pub store: DrawStore,
}

/// Fixed-`k` runs for `k = 1..=k_max`, in parallel.
pub fn preliminary_runs(data: &Dataset, config: &RunConfig) -> Result<Vec<PreliminaryRun>> {
    (1..=config.k_max)
        .into_par_iter()
        .map(|k| {
            let cfg =
                RunConfig { n_factors: k, rj_enabled: false, seed: derive_seed(config.seed, &[tag::PRELIM, k as u64]), ..config.clone() };
            let template = initial_spec(data, &cfg, k)?;
            let store = run_chain(data, &cfg)?;
            Ok(PreliminaryRun { template, store })
        })
        .collect()
}

pub fn proposals_from_runs(runs: &[PreliminaryRun], config: &RunConfig) -> Result<Vec<ModelProposal>> {
    let stores: Vec<DrawStore> = runs.iter().map(|r| r.store.clone()).collect();
    let templates: Vec<ModelSpec> = runs.iter().map(|r| r.template.clone()).collect();
    fit_proposals(&stores, &templates, config.rj_b, config.rj_c)
}

/// Templates for `k = 1..=k_max`, as used to read proposal bundles.
pub fn templates(data: &Dataset, config: &RunConfig) -> Result<Vec<ModelSpec>> {
    (1..=config.k_max).map(|k| initial_spec(data, config, k)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub store: DrawStore,
    /// Posterior frequency of `k = 1..=k_max`.
    pub k_frequencies: Vec<f64>,
}

impl Selection {
    pub fn modal_k(&self) -> usize {
        let mut best = 0;
        for (i, f) in self.k_frequencies.iter().enumerate() {
            if *f > self.k_frequencies[best] {
                best = i;
            }
        }
        best + 1
    }
}

pub fn k_frequencies(store: &DrawStore, k_max: usize) -> Result<Vec<f64>> {
    let ks = store.column(crate::columns::K).ok_or_else(|| Error::domain("store has no k column"))?;
    let mut freq = vec![0.0; k_max];
    for k in &ks {
        let k = *k as usize;
        if (1..=k_max).contains(&k) {
            freq[k - 1] += 1.0;
        }
    }
    let n = ks.len().max(1) as f64;
    Ok(freq.into_iter().map(|c| c / n).collect())
}

/// Runs the reversible-jump chain, fitting proposals from preliminary runs
/// when none are given.
pub fn select_k(data: &Dataset, config: &RunConfig, proposals: Option<Vec<ModelProposal>>) -> Result<Selection> {
    let config = RunConfig { rj_enabled: true, ..config.clone() };
    config.validate()?;
    let proposals = match proposals {
        Some(p) => p,
        None => proposals_from_runs(&preliminary_runs(data, &config)?, &config)?,
    };
    let store = run_chain_rj(data, &config, proposals)?;
    let k_frequencies = k_frequencies(&store, config.k_max)?;
    Ok(Selection { store, k_frequencies })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Experiment {
        let mut e = Experiment::simulated_design(130, 20);
        e.design.n_periods = 40;
        e.replications = 2;
        e
    }

    #[test]
    fn datasets_do_not_depend_on_particles() {
        let e = tiny();
        let f = Varied::Particles.apply(&e, 40.0);
        assert_eq!(e.dataset(1).unwrap(), f.dataset(1).unwrap());
        assert_ne!(e.dataset(0).unwrap(), e.dataset(1).unwrap());
        assert_eq!(f.run.particles, 40);
    }

    #[test]
    fn table_has_all_groups() {
        let rows = sweep_table(&tiny(), Varied::Particles, &[5.0]).unwrap();
        for g in TABLE_GROUPS {
            let s = rows[0].group(g).unwrap_or_else(|| panic!("{g}"));
            assert!(s.median.is_finite() && s.max >= s.median);
        }
        assert_eq!(rows[0].group("bf").unwrap().n_columns, 2 * 21);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_table(&p, Varied::Particles, &rows, TableStat::ComputeTime).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("M,(βf),Λ^E,α,θ\n5,"), "{text}");
    }

    #[test]
    fn modal_k_and_frequencies() {
        let mut store = DrawStore::new(vec!["k".into()]);
        for k in [1.0, 2.0, 2.0, 3.0] {
            store.push(vec![k]).unwrap();
        }
        let s = Selection { k_frequencies: k_frequencies(&store, 3).unwrap(), store };
        assert_eq!(s.k_frequencies, vec![0.25, 0.5, 0.25]);
        assert_eq!(s.modal_k(), 2);
    }

    #[test]
    fn select_k_smoke() {
        let e = tiny();
        let data = e.dataset(0).unwrap();
        let cfg = RunConfig {
            identification: Identification::TriangularUnitVariance,
            garch_prior: GarchPrior::UniformCoefficients,
            k_max: 2,
            n_iterations: 40,
            burn_in: 10,
            ..e.run.clone()
        };
        let sel = select_k(&data, &cfg, None).unwrap();
        assert_eq!(sel.store.n_draws(), 30);
        assert!((sel.k_frequencies.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
