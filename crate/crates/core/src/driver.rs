//! The Gibbs sampler: sweep orchestration, draw archiving and
//! checkpointing.
//!
//! Each iteration runs, in order: the conditional SMC update of the factor
//! path, the loadings draw, the idiosyncratic update, a Metropolis step
//! per factor GARCH process (with proposal adaptation), the leverage draw
//! under GARCH-M, and optionally a reversible-jump move over the number of
//! factors. Every block draws from its own seed derived from the root
//! seed, the iteration and the block, so a chain is a pure function of its
//! data and configuration.

use std::path::Path;

use log::{debug, info};
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::columns;
use crate::diagnostics::DrawStore;
use crate::error::{Error, Result};
use crate::model::{Dataset, GarchParams, Identification, IdioMode, IdioSpec, MeanMode, ModelSpec};
use crate::particle::{csmc_sweep, FactorPath, DEFAULT_TRUNCATION};
use crate::rjmcmc::{rj_move, ModelProposal, RjPrior, RjState, DEFAULT_SCALE};
use crate::rng::{derive_seed, rng_from_seed, tag};
use crate::samplers::{
    garch_to_phi, mh_step_garch, phi_to_garch, sample_idio_variance_constant, sample_leverage, sample_loadings_invariant,
    sample_loadings_triangular, AdaptiveProposal, GarchPrior, IgPrior, DEFAULT_C_LAMBDA, DEFAULT_JITTER, DEFAULT_PRIOR_VAR, DEFAULT_WARMUP,
    INITIAL_PROPOSAL_SD,
};

/// Run-length, model-structure and prior settings of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub n_iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub particles: usize,
    pub trunc: usize,
    pub seed: u64,
    pub n_factors: usize,
    pub identification: Identification,
    pub idio_mode: IdioMode,
    pub mean_mode: MeanMode,
    pub garch_prior: GarchPrior,
    pub prior_var: f64,
    pub c_lambda: f64,
    pub ig_prior_mean: f64,
    pub ig_prior_df: f64,
    pub adapt_warmup: usize,
    pub adapt_jitter: f64,
    pub initial_proposal_sd: f64,
    /// Hold the factor path at its initial value.
    pub fix_factors: bool,
    pub fix_loadings: bool,
    pub fix_factor_garch: bool,
    pub fix_idio: bool,
    /// Number of randomly chosen `(βf)` entries archived besides series 1 at period 5.
    pub bf_audit: usize,
    /// Archive every `(βf)` entry instead of the audit sample.
    pub archive_all_bf: bool,
    pub rj_enabled: bool,
    pub k_max: usize,
    pub rj_b: f64,
    pub rj_c: f64,
    /// Prior mass on `k = 1..=k_max`; uniform when absent.
    pub prior_k: Option<Vec<f64>>,
    /// Starting parameters; defaults are used when absent.
    pub initial: Option<ModelSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n_iterations: 2000,
            burn_in: 500,
            thin: 1,
            particles: 10,
            trunc: DEFAULT_TRUNCATION,
            seed: 1,
            n_factors: 2,
            identification: Identification::TriangularUnitDiag,
            idio_mode: IdioMode::Constant,
            mean_mode: MeanMode::ZeroMean,
            garch_prior: GarchPrior::FlatPhi,
            prior_var: DEFAULT_PRIOR_VAR,
            c_lambda: DEFAULT_C_LAMBDA,
            ig_prior_mean: 0.1,
            ig_prior_df: 4.0,
            adapt_warmup: DEFAULT_WARMUP,
            adapt_jitter: DEFAULT_JITTER,
            initial_proposal_sd: INITIAL_PROPOSAL_SD,
            fix_factors: false,
            fix_loadings: false,
            fix_factor_garch: false,
            fix_idio: false,
            bf_audit: 20,
            archive_all_bf: false,
            rj_enabled: false,
            k_max: 3,
            rj_b: DEFAULT_SCALE,
            rj_c: DEFAULT_SCALE,
            prior_k: None,
            initial: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(m.to_string()));
        if self.burn_in >= self.n_iterations {
            return err("burn_in must be smaller than n_iterations");
        }
        if self.thin == 0 || self.particles == 0 || self.trunc == 0 || self.n_factors == 0 {
            return err("thin, particles, trunc and n_factors must be at least 1");
        }
        if !(self.prior_var > 0.0) || !(self.c_lambda >= 0.0) {
            return err("prior_var must be positive and c_lambda non-negative");
        }
        self.ig_prior()?;
        if self.identification == Identification::Invariant
            && (self.idio_mode != IdioMode::Constant || self.mean_mode != MeanMode::ZeroMean)
        {
            return err("invariant identification needs constant idiosyncratic variances and zero-mean factors");
        }
        if self.rj_enabled {
            if !self.identification.is_triangular() {
                return err("reversible jump needs triangular identification");
            }
            if self.garch_prior != GarchPrior::UniformCoefficients {
                return err("reversible jump needs garch_prior = \"uniform_coefficients\" so the prior is proper");
            }
            if self.n_factors > self.k_max {
                return err("n_factors exceeds k_max");
            }
            if let Some(p) = &self.prior_k {
                if p.len() != self.k_max || p.iter().any(|x| !(*x > 0.0)) {
                    return err("prior_k needs k_max positive entries");
                }
            }
        }
        Ok(())
    }

    pub fn ig_prior(&self) -> Result<IgPrior> {
        IgPrior::new(self.ig_prior_mean, self.ig_prior_df).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn rj_prior(&self) -> Result<RjPrior> {
        let mut prior = RjPrior::uniform(self.k_max, self.prior_var, self.ig_prior()?);
        if let Some(p) = &self.prior_k {
            let total: f64 = p.iter().sum();
            prior.prior_k = p.iter().map(|x| x / total).collect();
        }
        Ok(prior)
    }

    fn new_proposal(&self, dim: usize) -> AdaptiveProposal {
        AdaptiveProposal::with_settings(dim, self.adapt_warmup, self.initial_proposal_sd, self.adapt_jitter)
    }

    /// Hash of every setting except `n_iterations`, which may grow on resume.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.n_iterations = 0;
        let json = serde_json::to_vec(&c).expect("configuration serialises");
        hex::encode(Sha256::digest(json))
    }
}

fn sample_variance(col: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = col.clone().count() as f64;
    let m = col.clone().sum::<f64>() / n;
    col.map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)
}

/// Starting parameters for `k` factors: identified-pattern loadings,
/// GARCH (innov, lag) = (0.05, 0.90) with unit unconditional variance,
/// zero leverage, and idiosyncratic variances at half the sample variance.
pub fn initial_spec(data: &Dataset, config: &RunConfig, k: usize) -> Result<ModelSpec> {
    if let Some(s) = &config.initial {
        if s.n_factors == k {
            let mut s = s.clone();
            s.n_periods = data.n_periods();
            s.validate()?;
            return Ok(s);
        }
    }
    let n = data.n_series();
    let mut loadings = DMatrix::zeros(n, k);
    for j in 0..k.min(n) {
        loadings[(j, j)] = 1.0;
    }
    let mut g = GarchParams::unit_variance(0.05, 0.90)?;
    if config.mean_mode == MeanMode::GarchInMean {
        g = g.with_leverage(0.0);
    }
    let half_var: Vec<f64> = (0..n)
        .map(|i| {
            let v = 0.5 * sample_variance(data.observations.column(i).iter().copied());
            if v > 0.0 && v.is_finite() {
                v
            } else {
                1.0
            }
        })
        .collect();
    let idio = match config.idio_mode {
        IdioMode::Constant => IdioSpec::Constant(DVector::from_vec(half_var)),
        IdioMode::Garch => IdioSpec::Garch(half_var.iter().map(|v| GarchParams::new(v * 0.05, 0.05, 0.90)).collect::<Result<_>>()?),
    };
    let spec = ModelSpec {
        n_series: n,
        n_factors: k,
        n_periods: data.n_periods(),
        factor_garch: vec![g; k],
        idio,
        loadings,
        identification: config.identification,
        mean_mode: config.mean_mode,
    };
    spec.validate()?;
    Ok(spec)
}

/// Everything that changes from one sweep to the next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub spec: ModelSpec,
    pub path: FactorPath,
    pub factor_proposals: Vec<AdaptiveProposal>,
    pub idio_proposals: Vec<AdaptiveProposal>,
    /// Index of the next iteration to run.
    pub iteration: usize,
    pub rj_proposed: usize,
    pub rj_accepted: usize,
}

impl ChainState {
    pub fn k(&self) -> usize {
        self.spec.n_factors
    }
}

/// Self-describing snapshot of a chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub crate_version: String,
    pub config: RunConfig,
    pub config_hash: String,
    pub data_fingerprint: String,
    pub bf_entries: Vec<(usize, usize)>,
    pub proposals: Option<Vec<ModelProposal>>,
    pub state: ChainState,
    pub store: DrawStore,
}

pub const CHECKPOINT_FORMAT: &str = "factor-garch-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn data_fingerprint(data: &Dataset) -> String {
    let mut h = Sha256::new();
    h.update((data.n_periods() as u64).to_le_bytes());
    h.update((data.n_series() as u64).to_le_bytes());
    for t in 0..data.n_periods() {
        for i in 0..data.n_series() {
            h.update(data.observations[(t, i)].to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Lines `key: checkpoint = .., requested = ..` for every differing setting
/// other than `n_iterations`.
pub fn config_diff(saved: &RunConfig, requested: &RunConfig) -> Vec<String> {
    let a = serde_json::to_value(saved).expect("configuration serialises");
    let b = serde_json::to_value(requested).expect("configuration serialises");
    let (Some(a), Some(b)) = (a.as_object(), b.as_object()) else {
        return vec!["configuration is not a table".into()];
    };
    a.iter()
        .filter(|(k, _)| k.as_str() != "n_iterations")
        .filter(|(k, v)| b.get(k.as_str()) != Some(*v))
        .map(|(k, v)| format!("{k}: checkpoint = {v}, requested = {}", b.get(k.as_str()).cloned().unwrap_or_default()))
        .collect()
}

/// Under invariant loadings the joint prior carries the factor term
/// `exp(-c/2 Σ_t f_t'β'β f_t)`. It enters the factor update as N extra
/// observations of zero with loadings `β` and variance `1/c`.
fn invariant_augmentation(data: &Dataset, spec: &ModelSpec, c_lambda: f64) -> Result<Option<(Dataset, ModelSpec)>> {
    if spec.identification != Identification::Invariant || c_lambda == 0.0 {
        return Ok(None);
    }
    let IdioSpec::Constant(v) = &spec.idio else {
        return Err(Error::domain("invariant loadings need constant idiosyncratic variances"));
    };
    let (t_len, n) = (data.n_periods(), data.n_series());
    let mut obs = DMatrix::zeros(t_len, 2 * n);
    obs.columns_mut(0, n).copy_from(&data.observations);
    let mut loadings = DMatrix::zeros(2 * n, spec.n_factors);
    loadings.rows_mut(0, n).copy_from(&spec.loadings);
    loadings.rows_mut(n, n).copy_from(&spec.loadings);
    let idio = DVector::from_fn(2 * n, |i, _| if i < n { v[i] } else { 1.0 / c_lambda });
    let aug = ModelSpec { n_series: 2 * n, loadings, idio: IdioSpec::Constant(idio), ..spec.clone() };
    Ok(Some((Dataset::new(obs)?, aug)))
}

/// A running Gibbs chain.
pub struct Chain<'a> {
    data: &'a Dataset,
    config: RunConfig,
    proposals: Option<Vec<ModelProposal>>,
    rj_prior: Option<RjPrior>,
    bf_entries: Vec<(usize, usize)>,
    state: ChainState,
    store: DrawStore,
}

fn choose_bf_entries(config: &RunConfig, t_len: usize, n: usize) -> Vec<(usize, usize)> {
    if config.archive_all_bf {
        return (0..t_len).flat_map(|t| (0..n).map(move |i| (t, i))).collect();
    }
    let mut out = Vec::new();
    if t_len > 4 && n > 0 {
        out.push((4, 0));
    }
    let total = t_len * n;
    let want = config.bf_audit.min(total.saturating_sub(out.len()));
    if want > 0 {
        let mut rng = rng_from_seed(derive_seed(config.seed, &[tag::AUDIT]));
        let mut picks: Vec<usize> = sample_indices(&mut rng, total, (want + 1).min(total)).into_vec();
        picks.retain(|&x| !(t_len > 4 && x == 4 * n));
        picks.truncate(want);
        picks.sort_unstable();
        out.extend(picks.into_iter().map(|x| (x / n, x % n)));
    }
    out
}

fn store_names(spec: &ModelSpec, bf_entries: &[(usize, usize)], rj: bool) -> Vec<String> {
    let mut names = if rj {
        let mut v = vec![columns::K.to_string()];
        v.extend(columns::idio_names(spec));
        v
    } else {
        columns::parameter_names(spec)
    };
    names.extend(bf_entries.iter().map(|&(t, i)| columns::bf(t, i)));
    names
}

impl<'a> Chain<'a> {
    /// Starts a chain. Reversible-jump runs need one proposal per `k` up to `k_max`.
    pub fn new(data: &'a Dataset, config: RunConfig, proposals: Option<Vec<ModelProposal>>) -> Result<Self> {
        config.validate()?;
        if data.n_series() < config.n_factors {
            return Err(Error::Config(format!("{} factors exceed {} series", config.n_factors, data.n_series())));
        }
        let rj_prior = if config.rj_enabled {
            match &proposals {
                Some(p) if p.len() == config.k_max => {}
                _ => return Err(Error::Config(format!("reversible jump needs proposals for k = 1..={}", config.k_max))),
            }
            Some(config.rj_prior()?)
        } else {
            None
        };
        let spec = initial_spec(data, &config, config.n_factors)?;
        let path = FactorPath::zeros(&spec, data)?;
        let phi_dim = if config.identification.unit_variance() { 2 } else { 3 };
        let factor_proposals = (0..spec.n_factors).map(|_| config.new_proposal(phi_dim)).collect();
        let idio_proposals = match spec.idio {
            IdioSpec::Garch(_) => (0..spec.n_series).map(|_| config.new_proposal(3)).collect(),
            IdioSpec::Constant(_) => Vec::new(),
        };
        let bf_entries = choose_bf_entries(&config, data.n_periods(), data.n_series());
        let store = DrawStore::new(store_names(&spec, &bf_entries, config.rj_enabled));
        Ok(Chain {
            data,
            config,
            proposals,
            rj_prior,
            bf_entries,
            state: ChainState { spec, path, factor_proposals, idio_proposals, iteration: 0, rj_proposed: 0, rj_accepted: 0 },
            store,
        })
    }

    /// Restores a chain from a checkpoint, refusing if `config` differs in
    /// anything but `n_iterations` or if the data changed.
    pub fn from_checkpoint(data: &'a Dataset, checkpoint: Checkpoint, config: RunConfig) -> Result<Self> {
        if checkpoint.format != CHECKPOINT_FORMAT || checkpoint.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!("unsupported checkpoint {} v{}", checkpoint.format, checkpoint.version)));
        }
        let diff = config_diff(&checkpoint.config, &config);
        if !diff.is_empty() || checkpoint.config_hash != config.hash() {
            return Err(Error::ConfigMismatch(diff.join("\n")));
        }
        if checkpoint.data_fingerprint != data_fingerprint(data) {
            return Err(Error::ConfigMismatch("data: observations differ from the checkpointed run".into()));
        }
        config.validate()?;
        let rj_prior = if config.rj_enabled { Some(config.rj_prior()?) } else { None };
        Ok(Chain {
            data,
            config,
            proposals: checkpoint.proposals,
            rj_prior,
            bf_entries: checkpoint.bf_entries,
            state: checkpoint.state,
            store: checkpoint.store,
        })
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn store(&self) -> &DrawStore {
        &self.store
    }

    pub fn into_store(self) -> DrawStore {
        self.store
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn bf_entries(&self) -> &[(usize, usize)] {
        &self.bf_entries
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            crate_version: env!("CARGO_PKG_VERSION").into(),
            config: self.config.clone(),
            config_hash: self.config.hash(),
            data_fingerprint: data_fingerprint(self.data),
            bf_entries: self.bf_entries.clone(),
            proposals: self.proposals.clone(),
            state: self.state.clone(),
            store: self.store.clone(),
        }
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, &self.checkpoint())?;
        Ok(())
    }

    /// Runs until `config.n_iterations` iterations have been completed.
    pub fn run(&mut self) -> Result<()> {
        let every = (self.config.n_iterations / 10).max(1);
        while self.state.iteration < self.config.n_iterations {
            self.step()?;
            if self.state.iteration.is_multiple_of(every) {
                info!("iteration {}/{}", self.state.iteration, self.config.n_iterations);
            }
        }
        Ok(())
    }

    /// Runs one sweep and archives it if it is retained.
    pub fn step(&mut self) -> Result<()> {
        let it = self.state.iteration;
        self.sweep(it)?;
        if it >= self.config.burn_in && (it - self.config.burn_in).is_multiple_of(self.config.thin) {
            let row = self.archive_row();
            self.store.push(row).map_err(|e| e.in_block(it, "archive"))?;
        }
        self.state.iteration += 1;
        Ok(())
    }

    fn archive_row(&self) -> Vec<f64> {
        let spec = &self.state.spec;
        let mut row = if self.config.rj_enabled {
            let mut v = vec![spec.n_factors as f64];
            v.extend(columns::idio_values(spec));
            v
        } else {
            columns::parameter_values(spec)
        };
        let f = &self.state.path.values;
        row.extend(self.bf_entries.iter().map(|&(t, i)| (0..spec.n_factors).map(|j| spec.loadings[(i, j)] * f[(t, j)]).sum::<f64>()));
        row
    }

    fn refresh_path(&mut self) -> Result<()> {
        self.state.path = FactorPath::from_values(self.state.path.values.clone(), &self.state.spec, self.data)?;
        Ok(())
    }

    fn residuals(&self) -> DMatrix<f64> {
        &self.data.observations - &self.state.path.values * self.state.spec.loadings.transpose()
    }

    fn sweep(&mut self, it: usize) -> Result<()> {
        let root = self.config.seed;
        let seed = |block: u64| derive_seed(root, &[tag::SWEEP, it as u64, block]);
        let wrap = |block: &'static str| move |e: Error| e.in_block(it, block);

        if !self.config.fix_factors {
            self.update_factors(seed(tag::CSMC)).map_err(wrap("factors"))?;
        }
        if !self.config.fix_loadings {
            self.update_loadings(seed(tag::LOADINGS)).map_err(wrap("loadings"))?;
        }
        if !self.config.fix_idio {
            self.update_idio(seed(tag::IDIO)).map_err(wrap("idiosyncratic"))?;
        }
        if !self.config.fix_factor_garch {
            self.update_factor_garch(seed(tag::FACTOR_GARCH)).map_err(wrap("factor_garch"))?;
            if self.config.mean_mode == MeanMode::GarchInMean {
                self.update_leverage(seed(tag::LEVERAGE));
            }
        }
        if self.config.rj_enabled {
            self.rj_step(seed(tag::RJ)).map_err(wrap("reversible_jump"))?;
        }
        Ok(())
    }

    fn update_factors(&mut self, seed: u64) -> Result<()> {
        let (m, trunc) = (self.config.particles, self.config.trunc);
        match invariant_augmentation(self.data, &self.state.spec, self.config.c_lambda)? {
            None => self.state.path = csmc_sweep(self.data, &self.state.spec, &self.state.path, m, trunc, seed)?,
            Some((data, spec)) => {
                let path = csmc_sweep(&data, &spec, &self.state.path, m, trunc, seed)?;
                self.state.path = FactorPath::from_values(path.values, &self.state.spec, self.data)?;
            }
        }
        Ok(())
    }

    /// Replaces the factor path, e.g. to start from known factors.
    pub fn set_factor_values(&mut self, values: DMatrix<f64>) -> Result<()> {
        self.state.path = FactorPath::from_values(values, &self.state.spec, self.data)?;
        Ok(())
    }

    fn update_loadings(&mut self, seed: u64) -> Result<()> {
        let mut rng = rng_from_seed(seed);
        let spec = &self.state.spec;
        let f = &self.state.path.values;
        let loadings = match (spec.identification, &spec.idio) {
            (Identification::Invariant, IdioSpec::Constant(v)) => {
                sample_loadings_invariant(f, &self.data.observations, v.as_slice(), self.config.c_lambda, &mut rng)?
            }
            (Identification::Invariant, IdioSpec::Garch(_)) => return Err(Error::domain("invariant loadings need constant variances")),
            (ident, _) => sample_loadings_triangular(
                f,
                &self.data.observations,
                &self.state.path.idio_var_path,
                self.config.prior_var,
                ident,
                &mut rng,
            )?,
        };
        self.state.spec.loadings = loadings;
        if matches!(self.state.spec.idio, IdioSpec::Garch(_)) {
            self.refresh_path()?;
        }
        Ok(())
    }

    fn update_idio(&mut self, seed: u64) -> Result<()> {
        let resid = self.residuals();
        match &self.state.spec.idio {
            IdioSpec::Constant(_) => {
                let mut rng = rng_from_seed(seed);
                let v = sample_idio_variance_constant(&resid, &self.config.ig_prior()?, &mut rng)?;
                self.state.spec.idio = IdioSpec::Constant(v);
            }
            IdioSpec::Garch(gs) => {
                let mut updated = Vec::with_capacity(gs.len());
                for (i, g) in gs.iter().enumerate() {
                    let mut rng = rng_from_seed(derive_seed(seed, &[i as u64]));
                    let series: Vec<f64> = resid.column(i).iter().copied().collect();
                    let current = garch_to_phi(g, false)?;
                    let proposal = &mut self.state.idio_proposals[i];
                    let (next, accepted) = mh_step_garch(&series, 0.0, &current, proposal, self.config.garch_prior, &mut rng)?;
                    proposal.observe(&next.to_vector());
                    updated.push(if accepted { phi_to_garch(&next)? } else { *g });
                }
                self.state.spec.idio = IdioSpec::Garch(updated);
            }
        }
        self.refresh_path()
    }

    fn update_factor_garch(&mut self, seed: u64) -> Result<()> {
        let constrained = self.state.spec.identification.unit_variance();
        for j in 0..self.state.spec.n_factors {
            let mut rng = rng_from_seed(derive_seed(seed, &[j as u64]));
            let g = self.state.spec.factor_garch[j];
            let series: Vec<f64> = self.state.path.values.column(j).iter().copied().collect();
            let tau = g.leverage.unwrap_or(0.0);
            let current = garch_to_phi(&g, constrained)?;
            let proposal = &mut self.state.factor_proposals[j];
            let (next, accepted) = mh_step_garch(&series, tau, &current, proposal, self.config.garch_prior, &mut rng)?;
            proposal.observe(&next.to_vector());
            if accepted {
                let mut p = phi_to_garch(&next)?;
                p.leverage = g.leverage;
                self.state.spec.factor_garch[j] = p;
            }
        }
        self.refresh_path()
    }

    fn update_leverage(&mut self, seed: u64) {
        for j in 0..self.state.spec.n_factors {
            let mut rng = rng_from_seed(derive_seed(seed, &[j as u64]));
            let f: Vec<f64> = self.state.path.values.column(j).iter().copied().collect();
            let lambda: Vec<f64> = self.state.path.factor_var_path.column(j).iter().copied().collect();
            let tau = sample_leverage(&f, &lambda, &mut rng);
            self.state.spec.factor_garch[j].leverage = Some(tau);
        }
    }

    fn rj_step(&mut self, seed: u64) -> Result<()> {
        let (Some(proposals), Some(prior)) = (&self.proposals, &self.rj_prior) else {
            return Err(Error::Config("reversible jump is enabled without proposals".into()));
        };
        let state = RjState { spec: self.state.spec.clone(), loglik_hat: f64::NAN, path: self.state.path.clone() };
        let out = rj_move(&state, proposals, self.data, self.config.particles, prior, seed)?;
        self.state.rj_proposed += 1;
        if out.accepted {
            self.state.rj_accepted += 1;
            let k_new = out.state.k();
            debug!("jump {} -> {} accepted (log alpha {:.3})", self.state.k(), k_new, out.log_alpha);
            let phi_dim = if self.config.identification.unit_variance() { 2 } else { 3 };
            self.state.factor_proposals.truncate(k_new);
            while self.state.factor_proposals.len() < k_new {
                self.state.factor_proposals.push(self.config.new_proposal(phi_dim));
            }
            self.state.spec = out.state.spec;
            self.state.path = out.state.path;
        }
        Ok(())
    }
}

/// Runs a fixed-`k` chain to completion.
pub fn run_chain(data: &Dataset, config: &RunConfig) -> Result<DrawStore> {
    let mut chain = Chain::new(data, config.clone(), None)?;
    chain.run()?;
    Ok(chain.into_store())
}

/// Runs a reversible-jump chain with the given proposals.
pub fn run_chain_rj(data: &Dataset, config: &RunConfig, proposals: Vec<ModelProposal>) -> Result<DrawStore> {
    let mut chain = Chain::new(data, config.clone(), Some(proposals))?;
    chain.run()?;
    Ok(chain.into_store())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    Ok(serde_json::from_reader(f)?)
}

/// Continues a checkpointed chain up to `config.n_iterations`.
pub fn resume(checkpoint_path: impl AsRef<Path>, config: &RunConfig, data: &Dataset) -> Result<DrawStore> {
    let mut chain = Chain::from_checkpoint(data, load_checkpoint(checkpoint_path)?, config.clone())?;
    chain.run()?;
    Ok(chain.into_store())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::simulate;

    fn design(t: usize, n: usize, k: usize, idio: f64, seed: u64) -> Dataset {
        let mut loadings = DMatrix::zeros(n, k);
        for i in 0..n {
            for j in 0..k.min(i + 1) {
                loadings[(i, j)] = if i == j { 1.0 } else { 0.5 };
            }
        }
        let spec = ModelSpec {
            n_series: n,
            n_factors: k,
            n_periods: t,
            factor_garch: vec![GarchParams::unit_variance(0.04, 0.90).unwrap(); k],
            idio: IdioSpec::Constant(DVector::from_element(n, idio)),
            loadings,
            identification: Identification::TriangularUnitDiag,
            mean_mode: MeanMode::ZeroMean,
        };
        simulate(&spec, seed).unwrap()
    }

    fn short_config() -> RunConfig {
        RunConfig { n_iterations: 30, burn_in: 10, particles: 5, ..RunConfig::default() }
    }

    #[test]
    fn single_retained_draw() {
        let data = design(40, 4, 2, 0.1, 1);
        let cfg = RunConfig { n_iterations: 11, burn_in: 10, ..short_config() };
        let store = run_chain(&data, &cfg).unwrap();
        assert_eq!(store.n_draws(), 1);
    }

    #[test]
    fn thinning_and_names() {
        let data = design(40, 4, 2, 0.1, 1);
        let cfg = RunConfig { thin: 3, ..short_config() };
        let store = run_chain(&data, &cfg).unwrap();
        assert_eq!(store.n_draws(), 7);
        assert!(store.column_index("bf[5,1]").is_some());
        assert_eq!(store.group_columns("bf").len(), 21);
        assert!(store.column_index("beta[2,1]").is_some());
        assert!(store.column_index("beta[1,1]").is_none());
    }

    #[test]
    fn deterministic_and_constraint_preserving() {
        let data = design(40, 4, 2, 0.1, 3);
        for ident in [Identification::TriangularUnitDiag, Identification::TriangularUnitVariance, Identification::Invariant] {
            let cfg = RunConfig { identification: ident, ..short_config() };
            let a = run_chain(&data, &cfg).unwrap();
            let b = run_chain(&data, &cfg).unwrap();
            assert_eq!(a, b);
            let template = initial_spec(&data, &cfg, 2).unwrap();
            for row in &a.rows {
                let s = columns::spec_from_row(&template, &a, row).unwrap();
                s.validate().unwrap();
            }
        }
    }

    #[test]
    fn garch_idio_and_garch_in_mean_run() {
        let data = design(60, 4, 1, 0.2, 5);
        let cfg = RunConfig { n_factors: 1, idio_mode: IdioMode::Garch, mean_mode: MeanMode::GarchInMean, ..short_config() };
        let store = run_chain(&data, &cfg).unwrap();
        assert!(store.column_index("e_lag[4]").is_some());
        assert!(store.column_index("tau[1]").is_some());
        let tau = store.column("tau[1]").unwrap();
        assert!(tau.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn resume_is_bit_identical() {
        let data = design(30, 3, 1, 0.1, 7);
        let full_cfg = RunConfig { n_factors: 1, n_iterations: 40, burn_in: 15, ..short_config() };
        let full = run_chain(&data, &full_cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let ck = dir.path().join("chain.json");
        for split in [10, 15, 25] {
            let first = RunConfig { n_iterations: split.max(16), ..full_cfg.clone() };
            let mut chain = Chain::new(&data, first.clone(), None).unwrap();
            while chain.state().iteration < split {
                chain.step().unwrap();
            }
            chain.save_checkpoint(&ck).unwrap();
            let resumed = resume(&ck, &full_cfg, &data).unwrap();
            assert_eq!(resumed, full, "split at {split}");
        }
    }

    #[test]
    fn resume_refuses_changed_settings() {
        let data = design(30, 3, 1, 0.1, 7);
        let cfg = RunConfig { n_factors: 1, ..short_config() };
        let chain = Chain::new(&data, cfg.clone(), None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let ck = dir.path().join("chain.json");
        chain.save_checkpoint(&ck).unwrap();
        let changed = RunConfig { particles: 6, ..cfg.clone() };
        match resume(&ck, &changed, &data) {
            Err(Error::ConfigMismatch(d)) => assert!(d.contains("particles")),
            other => panic!("expected a mismatch, got {other:?}"),
        }
        let other_data = design(30, 3, 1, 0.1, 8);
        assert!(matches!(resume(&ck, &cfg, &other_data), Err(Error::ConfigMismatch(_))));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let data = design(30, 3, 1, 0.1, 7);
        for cfg in [
            RunConfig { burn_in: 30, ..short_config() },
            RunConfig { thin: 0, ..short_config() },
            RunConfig { identification: Identification::Invariant, idio_mode: IdioMode::Garch, ..short_config() },
            RunConfig { rj_enabled: true, ..short_config() },
            RunConfig { n_factors: 4, ..short_config() },
        ] {
            assert!(Chain::new(&data, cfg, None).is_err());
        }
    }

    #[test]
    fn block_errors_name_the_block() {
        let data = design(30, 3, 1, 0.1, 7);
        let mut cfg = RunConfig { n_factors: 1, ..short_config() };
        let mut bad = initial_spec(&data, &cfg, 1).unwrap();
        // Zero-dynamics factor parameters cannot be moved by the Metropolis block.
        bad.factor_garch = vec![GarchParams::new(1.0, 0.0, 0.0).unwrap()];
        cfg.initial = Some(bad);
        let err = run_chain(&data, &cfg).unwrap_err();
        assert!(matches!(err, Error::Block { iteration: 0, block: "factor_garch", .. }), "{err}");
    }
}
