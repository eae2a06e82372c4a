//! Reversible-jump moves over the number of factors.
//!
//! Proposals are independence densities fitted to preliminary fixed-k runs:
//! a Gaussian on the free loadings, a Gaussian on the stacked transformed
//! factor GARCH coordinates (with leverages under GARCH-M), and per-series
//! inverse-Gamma or transformed-GARCH Gaussians for the idiosyncratic
//! parameters. Likelihoods are estimated with the unconditional particle
//! filter. Moves need proper priors, so they are defined for triangular
//! identification with uniform GARCH coefficient priors.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::columns;
use crate::diagnostics::DrawStore;
use crate::error::{Error, Result};
use crate::kernels::{log_normal, LN_2PI};
use crate::model::{Dataset, GarchParams, IdioSpec, MeanMode, ModelSpec};
use crate::particle::{fapf_loglik, FactorPath};
use crate::rng::{derive_seed, rng_from_seed, tag};
use crate::samplers::idio::{draw_inverse_gamma, ig_log_density};
use crate::samplers::{garch_to_phi, log_prior_phi, phi_to_garch, GarchPrior, IgPrior, PhiCoords};

pub const DEFAULT_SCALE: f64 = 2.0;
const SPD_JITTER: f64 = 1e-10;

/// Multivariate normal with a cached Cholesky factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianBlock {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl GaussianBlock {
    /// Adds growing multiples of the identity until `cov` factorises.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.shape() != (d, d) {
            return Err(Error::domain("proposal covariance does not match its mean"));
        }
        let mut cov = (&cov + cov.transpose()) * 0.5;
        let mut jitter = SPD_JITTER;
        loop {
            if let Some(c) = cov.clone().cholesky() {
                return Ok(GaussianBlock { mean, cov, chol: c.unpack() });
            }
            if jitter > 1e6 || cov.iter().any(|x| !x.is_finite()) {
                return Err(Error::numeric("proposal covariance cannot be made positive definite"));
            }
            cov += DMatrix::identity(d, d) * jitter;
            jitter *= 10.0;
        }
    }

    /// Sample mean and `scale` times the sample covariance.
    pub fn fit(samples: &[DVector<f64>], scale: f64) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::domain("fitting a proposal needs at least two draws"));
        }
        let n = samples.len() as f64;
        let d = samples[0].len();
        let mean = samples.iter().fold(DVector::zeros(d), |a, x| a + x) / n;
        let mut cov = DMatrix::zeros(d, d);
        for x in samples {
            let e = x - &mean;
            cov += &e * e.transpose();
        }
        Self::new(mean, cov * (scale / (n - 1.0)))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        let Some(z) = self.chol.solve_lower_triangular(&(x - &self.mean)) else {
            return f64::NEG_INFINITY;
        };
        let log_det: f64 = self.chol.diagonal().iter().map(|v| v.ln()).sum();
        -0.5 * (self.dim() as f64 * LN_2PI + z.norm_squared()) - log_det
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + &self.chol * z
    }
}

/// Proposal for one parameter block. A block whose archived values never
/// moved is `Fixed`: it is held at those values and contributes to neither
/// the prior nor the proposal density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BlockProposal {
    Fixed(Vec<f64>),
    Gaussian(GaussianBlock),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum IdioProposal {
    Fixed(Vec<f64>),
    InverseGamma {
        shape: Vec<f64>,
        scale: Vec<f64>,
    },
    /// One Gaussian per series on its transformed GARCH coordinates.
    Garch(Vec<GaussianBlock>),
}

/// Independence proposal for the model with `k` factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProposal {
    pub k: usize,
    /// Model structure for this `k`; its parameter values are unused.
    pub template: ModelSpec,
    pub loadings: BlockProposal,
    pub factor_garch: BlockProposal,
    pub idio: IdioProposal,
    pub b_scale: f64,
    pub c_scale: f64,
}

fn check_structure(template: &ModelSpec) -> Result<()> {
    if !template.identification.is_triangular() {
        return Err(Error::domain("reversible jump needs triangular identification"));
    }
    Ok(())
}

/// Stacked transformed coordinates of the factor GARCH block.
pub fn factor_coords(spec: &ModelSpec) -> Result<DVector<f64>> {
    let constrained = spec.identification.unit_variance();
    let mut out = Vec::new();
    for p in &spec.factor_garch {
        out.extend(garch_to_phi(p, constrained)?.to_vector().iter());
        if spec.mean_mode == MeanMode::GarchInMean {
            out.push(p.leverage.unwrap_or(0.0));
        }
    }
    Ok(DVector::from_vec(out))
}

fn factor_width(template: &ModelSpec) -> usize {
    let phi = if template.identification.unit_variance() { 2 } else { 3 };
    phi + usize::from(template.mean_mode == MeanMode::GarchInMean)
}

fn factor_phis(template: &ModelSpec, coords: &DVector<f64>) -> Vec<(PhiCoords, Option<f64>)> {
    let constrained = template.identification.unit_variance();
    let w = factor_width(template);
    let d = if constrained { 2 } else { 3 };
    (0..template.n_factors)
        .map(|j| {
            let c = coords.rows(j * w, w);
            let phi = PhiCoords::from_vector(&c.rows(0, d).into_owned(), constrained);
            let tau = (w > d).then(|| c[d]);
            (phi, tau)
        })
        .collect()
}

fn decode_factor_coords(template: &ModelSpec, coords: &DVector<f64>) -> Option<Vec<GarchParams>> {
    factor_phis(template, coords)
        .into_iter()
        .map(|(phi, tau)| {
            let p = phi_to_garch(&phi).ok()?;
            Some(match tau {
                Some(t) => p.with_leverage(t),
                None => p,
            })
        })
        .collect()
}

fn is_constant(rows: &[Vec<f64>]) -> bool {
    rows.windows(2).all(|w| w[0] == w[1])
}

/// Fits the proposal for one `k` from a preliminary run's draws.
pub fn fit_proposal(store: &DrawStore, template: &ModelSpec, b: f64, c: f64) -> Result<ModelProposal> {
    check_structure(template)?;
    if store.n_draws() < 2 {
        return Err(Error::domain(format!("preliminary run for k = {} has fewer than two draws", template.n_factors)));
    }
    if !(b > 0.0 && c > 0.0) {
        return Err(Error::domain("proposal scales must be positive"));
    }
    let specs: Vec<ModelSpec> = store.rows.iter().map(|r| columns::spec_from_row(template, store, r)).collect::<Result<_>>()?;

    let loading_rows: Vec<Vec<f64>> = specs.iter().map(columns::loading_values).collect();
    let loadings = if is_constant(&loading_rows) {
        BlockProposal::Fixed(loading_rows[0].clone())
    } else {
        let xs: Vec<DVector<f64>> = loading_rows.into_iter().map(DVector::from_vec).collect();
        BlockProposal::Gaussian(GaussianBlock::fit(&xs, b)?)
    };

    let garch_rows: Vec<Vec<f64>> = specs.iter().map(columns::factor_garch_values).collect();
    let factor_garch = if is_constant(&garch_rows) {
        BlockProposal::Fixed(garch_rows[0].clone())
    } else {
        let xs: Vec<DVector<f64>> = specs.iter().map(factor_coords).collect::<Result<_>>()?;
        BlockProposal::Gaussian(GaussianBlock::fit(&xs, c)?)
    };

    let idio_rows: Vec<Vec<f64>> = specs.iter().map(columns::idio_values).collect();
    let idio = if is_constant(&idio_rows) {
        IdioProposal::Fixed(idio_rows[0].clone())
    } else {
        match template.idio {
            IdioSpec::Constant(_) => {
                let n = template.n_series;
                let r = idio_rows.len() as f64;
                let mut shape = Vec::with_capacity(n);
                let mut scale = Vec::with_capacity(n);
                for i in 0..n {
                    let m = idio_rows.iter().map(|x| x[i]).sum::<f64>() / r;
                    let v = idio_rows.iter().map(|x| (x[i] - m).powi(2)).sum::<f64>() / (r - 1.0);
                    let v = (c * v).max(SPD_JITTER * m * m);
                    // Moment match: mean m and variance v.
                    let a = m * m / v + 2.0;
                    shape.push(a);
                    scale.push(m * (a - 1.0));
                }
                IdioProposal::InverseGamma { shape, scale }
            }
            IdioSpec::Garch(_) => {
                let n = template.n_series;
                let mut blocks = Vec::with_capacity(n);
                for i in 0..n {
                    let xs: Vec<DVector<f64>> = specs
                        .iter()
                        .map(|s| match &s.idio {
                            IdioSpec::Garch(g) => garch_to_phi(&g[i], false).map(|p| p.to_vector()),
                            IdioSpec::Constant(_) => unreachable!(),
                        })
                        .collect::<Result<_>>()?;
                    blocks.push(GaussianBlock::fit(&xs, c)?);
                }
                IdioProposal::Garch(blocks)
            }
        }
    };
    Ok(ModelProposal { k: template.n_factors, template: template.clone(), loadings, factor_garch, idio, b_scale: b, c_scale: c })
}

/// Fits proposals for `k = 1..=K̄` from one store and template per `k`.
pub fn fit_proposals(stores: &[DrawStore], templates: &[ModelSpec], b: f64, c: f64) -> Result<Vec<ModelProposal>> {
    if stores.len() != templates.len() || stores.is_empty() {
        return Err(Error::domain("need one preliminary store per candidate factor count"));
    }
    let out: Vec<ModelProposal> = stores.iter().zip(templates).map(|(s, t)| fit_proposal(s, t, b, c)).collect::<Result<_>>()?;
    for (i, p) in out.iter().enumerate() {
        if p.k != i + 1 {
            return Err(Error::domain("preliminary runs must cover k = 1, 2, ... in order"));
        }
    }
    Ok(out)
}

impl ModelProposal {
    /// Draws parameters; `None` when the draw leaves the prior support.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Option<ModelSpec>> {
        let t = &self.template;
        let mut spec = t.clone();
        spec.loadings = match &self.loadings {
            BlockProposal::Fixed(v) => columns::loadings_from_values(t, v)?,
            BlockProposal::Gaussian(g) => columns::loadings_from_values(t, g.sample(rng).as_slice())?,
        };
        spec.factor_garch = match &self.factor_garch {
            BlockProposal::Fixed(v) => columns::factor_garch_from_values(t, v)?,
            BlockProposal::Gaussian(g) => match decode_factor_coords(t, &g.sample(rng)) {
                Some(p) => p,
                None => return Ok(None),
            },
        };
        spec.idio = match &self.idio {
            IdioProposal::Fixed(v) => columns::idio_from_values(t, v)?,
            IdioProposal::InverseGamma { shape, scale } => IdioSpec::Constant(DVector::from_vec(
                shape.iter().zip(scale).map(|(a, b)| draw_inverse_gamma(*a, *b, rng)).collect::<Result<_>>()?,
            )),
            IdioProposal::Garch(blocks) => {
                let mut g = Vec::with_capacity(blocks.len());
                for b in blocks {
                    match phi_to_garch(&PhiCoords::from_vector(&b.sample(rng), false)) {
                        Ok(p) => g.push(p),
                        Err(_) => return Ok(None),
                    }
                }
                IdioSpec::Garch(g)
            }
        };
        Ok(spec.validate().is_ok().then_some(spec))
    }

    /// Proposal log density of the non-fixed blocks of `spec`.
    pub fn log_density(&self, spec: &ModelSpec) -> f64 {
        let mut lq = 0.0;
        if let BlockProposal::Gaussian(g) = &self.loadings {
            lq += g.log_density(&DVector::from_vec(columns::loading_values(spec)));
        }
        if let BlockProposal::Gaussian(g) = &self.factor_garch {
            lq += match factor_coords(spec) {
                Ok(x) => g.log_density(&x),
                Err(_) => f64::NEG_INFINITY,
            };
        }
        match (&self.idio, &spec.idio) {
            (IdioProposal::Fixed(_), _) => {}
            (IdioProposal::InverseGamma { shape, scale }, IdioSpec::Constant(v)) => {
                lq += v.iter().zip(shape.iter().zip(scale)).map(|(x, (a, b))| ig_log_density(*x, *a, *b)).sum::<f64>();
            }
            (IdioProposal::Garch(blocks), IdioSpec::Garch(gs)) => {
                for (b, p) in blocks.iter().zip(gs) {
                    lq += match garch_to_phi(p, false) {
                        Ok(c) => b.log_density(&c.to_vector()),
                        Err(_) => f64::NEG_INFINITY,
                    };
                }
            }
            _ => return f64::NEG_INFINITY,
        }
        lq
    }

    /// Prior log density of the non-fixed blocks of `spec`: independent
    /// normal loadings, uniform GARCH coefficients (as a density on the
    /// transformed coordinates), standard normal leverages and
    /// inverse-Gamma constant variances.
    pub fn log_prior(&self, spec: &ModelSpec, prior: &RjPrior) -> f64 {
        let mut lp = 0.0;
        if matches!(self.loadings, BlockProposal::Gaussian(_)) {
            lp += columns::loading_values(spec).iter().map(|b| log_normal(*b, 0.0, prior.prior_var)).sum::<f64>();
        }
        if matches!(self.factor_garch, BlockProposal::Gaussian(_)) {
            let Ok(coords) = factor_coords(spec) else {
                return f64::NEG_INFINITY;
            };
            for (phi, tau) in factor_phis(spec, &coords) {
                lp += log_prior_phi(&phi, GarchPrior::UniformCoefficients);
                if let Some(t) = tau {
                    lp += log_normal(t, 0.0, 1.0);
                }
            }
        }
        match (&self.idio, &spec.idio) {
            (IdioProposal::Fixed(_), _) => {}
            (_, IdioSpec::Constant(v)) => lp += v.iter().map(|x| prior.ig.log_density(*x)).sum::<f64>(),
            (_, IdioSpec::Garch(gs)) => {
                for p in gs {
                    lp += match garch_to_phi(p, false) {
                        Ok(c) => log_prior_phi(&c, GarchPrior::UniformCoefficients),
                        Err(_) => f64::NEG_INFINITY,
                    };
                }
            }
        }
        lp
    }
}

/// Priors entering the jump acceptance ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RjPrior {
    pub prior_var: f64,
    pub ig: IgPrior,
    /// Prior mass of `k = 1..=K̄`.
    pub prior_k: Vec<f64>,
}

impl RjPrior {
    pub fn uniform(k_max: usize, prior_var: f64, ig: IgPrior) -> Self {
        RjPrior { prior_var, ig, prior_k: vec![1.0 / k_max as f64; k_max] }
    }
}

/// Current position of a reversible-jump chain.
#[derive(Debug, Clone, PartialEq)]
pub struct RjState {
    pub spec: ModelSpec,
    pub loglik_hat: f64,
    pub path: FactorPath,
}

impl RjState {
    pub fn k(&self) -> usize {
        self.spec.n_factors
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RjOutcome {
    pub state: RjState,
    pub proposed_k: usize,
    pub log_alpha: f64,
    pub accepted: bool,
}

/// Keeps the first `min(k, k')` factor columns, appends zero columns, and
/// rebuilds the variance paths under `spec`.
pub fn pad_or_truncate(path: &FactorPath, spec: &ModelSpec, data: &Dataset) -> Result<FactorPath> {
    let k_to = spec.n_factors;
    let k_keep = k_to.min(path.n_factors());
    let mut values = DMatrix::zeros(path.n_periods(), k_to);
    values.columns_mut(0, k_keep).copy_from(&path.values.columns(0, k_keep));
    FactorPath::from_values(values, spec, data)
}

fn loglik_or_zero_mass(data: &Dataset, spec: &ModelSpec, particles: usize, seed: u64) -> Result<f64> {
    match fapf_loglik(data, spec, particles, seed) {
        Ok(v) => Ok(v),
        Err(Error::Degenerate { .. }) => Ok(f64::NEG_INFINITY),
        Err(e) => Err(e),
    }
}

/// One between-model move: uniform `k'`, independence draw of its
/// parameters, particle likelihoods for both sides, and the jump
/// acceptance test. The current likelihood is re-estimated with a fresh
/// seed every move.
pub fn rj_move(
    state: &RjState,
    proposals: &[ModelProposal],
    data: &Dataset,
    particles: usize,
    prior: &RjPrior,
    seed: u64,
) -> Result<RjOutcome> {
    let k_max = proposals.len();
    if k_max == 0 || prior.prior_k.len() != k_max {
        return Err(Error::domain("need one proposal and one prior mass per candidate factor count"));
    }
    let mut choice = rng_from_seed(derive_seed(seed, &[tag::RJ_CHOICE]));
    let k_new = choice.random_range(1..=k_max);
    let mut draw_rng = rng_from_seed(derive_seed(seed, &[tag::RJ_PROPOSAL]));
    let proposed = proposals[k_new - 1].draw(&mut draw_rng)?;
    rj_move_to(state, k_new, proposed, proposals, data, particles, prior, seed)
}

/// Completes a move to given proposed parameters (`None` is an automatic
/// rejection).
#[allow(clippy::too_many_arguments)]
pub fn rj_move_to(
    state: &RjState,
    k_new: usize,
    proposed: Option<ModelSpec>,
    proposals: &[ModelProposal],
    data: &Dataset,
    particles: usize,
    prior: &RjPrior,
    seed: u64,
) -> Result<RjOutcome> {
    let k_cur = state.k();
    if k_cur == 0 || k_cur > proposals.len() || k_new == 0 || k_new > proposals.len() {
        return Err(Error::domain("factor count outside the proposal range"));
    }
    let current_ll = loglik_or_zero_mass(data, &state.spec, particles, derive_seed(seed, &[tag::RJ_LIK_CURRENT]))?;
    let mut accept_rng = rng_from_seed(derive_seed(seed, &[tag::RJ_ACCEPT]));
    let mut kept = state.clone();
    kept.loglik_hat = current_ll;
    let Some(new_spec) = proposed else {
        return Ok(RjOutcome { state: kept, proposed_k: k_new, log_alpha: f64::NEG_INFINITY, accepted: false });
    };
    let (q_cur, q_new) = (&proposals[k_cur - 1], &proposals[k_new - 1]);
    let new_ll = loglik_or_zero_mass(data, &new_spec, particles, derive_seed(seed, &[tag::RJ_LIK_PROPOSED]))?;
    let numerator = new_ll + q_new.log_prior(&new_spec, prior) + prior.prior_k[k_new - 1].ln() + q_cur.log_density(&state.spec);
    let denominator = current_ll + q_cur.log_prior(&state.spec, prior) + prior.prior_k[k_cur - 1].ln() + q_new.log_density(&new_spec);
    let log_alpha = if numerator == f64::NEG_INFINITY { f64::NEG_INFINITY } else { numerator - denominator };
    if crate::samplers::metropolis_accept(log_alpha, &mut accept_rng) {
        let path = pad_or_truncate(&state.path, &new_spec, data)?;
        Ok(RjOutcome { state: RjState { spec: new_spec, loglik_hat: new_ll, path }, proposed_k: k_new, log_alpha, accepted: true })
    } else {
        Ok(RjOutcome { state: kept, proposed_k: k_new, log_alpha, accepted: false })
    }
}

fn push_vector(rows: &mut Vec<[String; 6]>, k: usize, block: &str, kind: &str, v: &[f64]) {
    for (i, x) in v.iter().enumerate() {
        rows.push([k.to_string(), block.into(), kind.into(), i.to_string(), "0".into(), format!("{x:?}")]);
    }
}

fn push_gaussian(rows: &mut Vec<[String; 6]>, k: usize, block: &str, g: &GaussianBlock) {
    push_vector(rows, k, block, "mean", g.mean.as_slice());
    for r in 0..g.dim() {
        for c in 0..g.dim() {
            rows.push([k.to_string(), block.into(), "cov".into(), r.to_string(), c.to_string(), format!("{:?}", g.cov[(r, c)])]);
        }
    }
}

/// Writes proposals as long-format CSV with columns
/// `k,block,kind,row,col,value`. Blocks are `scales`, `loadings`,
/// `factor_garch`, `idio` and `idio[i]`; kinds are `b`, `c`, `fixed`,
/// `mean`, `cov`, `ig_shape` and `ig_scale`. Covariances are stored after
/// scaling.
pub fn write_proposal_bundle(path: impl AsRef<Path>, proposals: &[ModelProposal]) -> Result<()> {
    let mut rows = Vec::new();
    for p in proposals {
        let k = p.k;
        push_vector(&mut rows, k, "scales", "b", &[p.b_scale]);
        push_vector(&mut rows, k, "scales", "c", &[p.c_scale]);
        for (name, block) in [("loadings", &p.loadings), ("factor_garch", &p.factor_garch)] {
            match block {
                BlockProposal::Fixed(v) => push_vector(&mut rows, k, name, "fixed", v),
                BlockProposal::Gaussian(g) => push_gaussian(&mut rows, k, name, g),
            }
        }
        match &p.idio {
            IdioProposal::Fixed(v) => push_vector(&mut rows, k, "idio", "fixed", v),
            IdioProposal::InverseGamma { shape, scale } => {
                push_vector(&mut rows, k, "idio", "ig_shape", shape);
                push_vector(&mut rows, k, "idio", "ig_scale", scale);
            }
            IdioProposal::Garch(blocks) => {
                for (i, g) in blocks.iter().enumerate() {
                    push_gaussian(&mut rows, k, &format!("idio[{i}]"), g);
                }
            }
        }
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["k", "block", "kind", "row", "col", "value"])?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

type Entries = BTreeMap<(String, String), Vec<(usize, usize, f64)>>;

fn entries_vector(e: &Entries, block: &str, kind: &str) -> Option<Vec<f64>> {
    let items = e.get(&(block.to_string(), kind.to_string()))?;
    let len = items.iter().map(|x| x.0 + 1).max().unwrap_or(0);
    let mut v = vec![0.0; len];
    for &(r, _, x) in items {
        v[r] = x;
    }
    Some(v)
}

fn entries_gaussian(e: &Entries, block: &str) -> Result<Option<GaussianBlock>> {
    let Some(mean) = entries_vector(e, block, "mean") else {
        return Ok(None);
    };
    let d = mean.len();
    let mut cov = DMatrix::zeros(d, d);
    for &(r, c, x) in e
        .get(&(block.to_string(), "cov".to_string()))
        .ok_or_else(|| Error::Config(format!("block `{block}` has a mean but no covariance")))?
    {
        if r >= d || c >= d {
            return Err(Error::Config(format!("block `{block}` covariance index out of range")));
        }
        cov[(r, c)] = x;
    }
    GaussianBlock::new(DVector::from_vec(mean), cov).map(Some)
}

fn entries_block(e: &Entries, block: &str) -> Result<BlockProposal> {
    if let Some(v) = entries_vector(e, block, "fixed") {
        return Ok(BlockProposal::Fixed(v));
    }
    entries_gaussian(e, block)?.map(BlockProposal::Gaussian).ok_or_else(|| Error::Config(format!("proposal bundle lacks block `{block}`")))
}

/// Reads a bundle written by [`write_proposal_bundle`]; `templates[k-1]`
/// supplies the model structure for each `k`.
pub fn read_proposal_bundle(path: impl AsRef<Path>, templates: &[ModelSpec]) -> Result<Vec<ModelProposal>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let mut by_k: BTreeMap<usize, Entries> = BTreeMap::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |m: String| Error::Load { path: path.display().to_string(), line: line + 2, message: m };
        if rec.len() != 6 {
            return Err(bad(format!("expected 6 fields, found {}", rec.len())));
        }
        let k: usize = rec[0].parse().map_err(|e| bad(format!("k: {e}")))?;
        let row: usize = rec[3].parse().map_err(|e| bad(format!("row: {e}")))?;
        let col: usize = rec[4].parse().map_err(|e| bad(format!("col: {e}")))?;
        let value: f64 = rec[5].parse().map_err(|e| bad(format!("value: {e}")))?;
        by_k.entry(k).or_default().entry((rec[1].to_string(), rec[2].to_string())).or_default().push((row, col, value));
    }
    let mut out = Vec::new();
    for (k, e) in by_k {
        let template = templates.get(k.wrapping_sub(1)).ok_or_else(|| Error::Config(format!("no model structure for k = {k}")))?;
        let scale = |kind: &str| entries_vector(&e, "scales", kind).and_then(|v| v.first().copied()).unwrap_or(DEFAULT_SCALE);
        let idio = if let Some(v) = entries_vector(&e, "idio", "fixed") {
            IdioProposal::Fixed(v)
        } else if let (Some(shape), Some(scale)) = (entries_vector(&e, "idio", "ig_shape"), entries_vector(&e, "idio", "ig_scale")) {
            IdioProposal::InverseGamma { shape, scale }
        } else {
            let mut blocks = Vec::new();
            while let Some(g) = entries_gaussian(&e, &format!("idio[{}]", blocks.len()))? {
                blocks.push(g);
            }
            IdioProposal::Garch(blocks)
        };
        out.push(ModelProposal {
            k,
            template: template.clone(),
            loadings: entries_block(&e, "loadings")?,
            factor_garch: entries_block(&e, "factor_garch")?,
            idio,
            b_scale: scale("b"),
            c_scale: scale("c"),
        });
    }
    for (i, p) in out.iter().enumerate() {
        if p.k != i + 1 {
            return Err(Error::Config("proposal bundle must cover k = 1, 2, ... without gaps".into()));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{simulate, Identification};
    use rand::SeedableRng;

    fn spec(k: usize, dynamics: bool) -> ModelSpec {
        let n = 4;
        let mut loadings = DMatrix::zeros(n, k);
        for i in 0..n {
            for j in 0..k.min(i + 1) {
                loadings[(i, j)] = if i == j { 1.0 } else { 0.6 - 0.1 * (i + j) as f64 };
            }
        }
        let g = if dynamics { GarchParams::new(0.1, 0.1, 0.8).unwrap() } else { GarchParams::new(1.0, 0.0, 0.0).unwrap() };
        ModelSpec {
            n_series: n,
            n_factors: k,
            n_periods: 30,
            factor_garch: vec![g; k],
            idio: IdioSpec::Constant(DVector::from_element(n, 0.2)),
            loadings,
            identification: Identification::TriangularUnitDiag,
            mean_mode: MeanMode::ZeroMean,
        }
    }

    fn store_around(template: &ModelSpec, draws: usize, seed: u64) -> DrawStore {
        use rand::Rng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut s = DrawStore::new(columns::parameter_names(template));
        for _ in 0..draws {
            let mut sp = template.clone();
            for (i, j) in columns::free_loadings(template) {
                sp.loadings[(i, j)] += 0.1 * rng.sample::<f64, _>(StandardNormal);
            }
            for p in sp.factor_garch.iter_mut().filter(|p| p.persistence() > 0.0) {
                let innov = 0.05 + 0.04 * rng.random::<f64>();
                let lag = 0.8 + 0.1 * rng.random::<f64>();
                *p = GarchParams::new(0.05 + 0.1 * rng.random::<f64>(), innov, lag).unwrap();
            }
            if let IdioSpec::Constant(v) = &mut sp.idio {
                for x in v.iter_mut() {
                    *x = 0.2 + 0.05 * rng.random::<f64>();
                }
            }
            s.push(columns::parameter_values(&sp)).unwrap();
        }
        s
    }

    #[test]
    fn gaussian_fit_recovers_moments_and_scales() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let truth = GaussianBlock::new(DVector::from_vec(vec![1.0, -2.0]), DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5])).unwrap();
        let xs: Vec<DVector<f64>> = (0..50_000).map(|_| truth.sample(&mut rng)).collect();
        let fit = GaussianBlock::fit(&xs, 1.0).unwrap();
        assert!((&fit.mean - &truth.mean).abs().max() < 0.02);
        assert!((&fit.cov - &truth.cov).abs().max() < 0.02);
        let scaled = GaussianBlock::fit(&xs, 2.0).unwrap();
        assert!((&scaled.cov - &fit.cov * 2.0).abs().max() < 1e-12);
    }

    #[test]
    fn identical_draws_become_fixed_or_jittered() {
        let xs = vec![DVector::from_vec(vec![0.5, 0.5]); 5];
        let g = GaussianBlock::fit(&xs, 2.0).unwrap();
        assert!(g.cov.diagonal().iter().all(|v| *v > 0.0 && *v < 1e-6));
        let t = spec(2, true);
        let mut s = DrawStore::new(columns::parameter_names(&t));
        for _ in 0..3 {
            s.push(columns::parameter_values(&t)).unwrap();
        }
        let p = fit_proposal(&s, &t, 2.0, 2.0).unwrap();
        assert!(matches!(p.loadings, BlockProposal::Fixed(_)));
        assert!(matches!(p.factor_garch, BlockProposal::Fixed(_)));
        assert!(matches!(p.idio, IdioProposal::Fixed(_)));
        assert!(fit_proposal(&DrawStore::new(columns::parameter_names(&t)), &t, 2.0, 2.0).is_err());
    }

    #[test]
    fn draws_have_finite_reproducible_density() {
        let t = spec(2, true);
        let p = fit_proposal(&store_around(&t, 300, 1), &t, 2.0, 2.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut finite = 0;
        for _ in 0..50 {
            if let Some(s) = p.draw(&mut rng).unwrap() {
                let (a, b) = (p.log_density(&s), p.log_density(&s));
                assert!(a.is_finite());
                assert_eq!(a, b);
                finite += 1;
            }
        }
        assert!(finite > 40);
    }

    #[test]
    fn ig_moment_fit_matches_archive() {
        let t = spec(1, true);
        let s = store_around(&t, 4000, 3);
        let p = fit_proposal(&s, &t, 1.0, 1.0).unwrap();
        let IdioProposal::InverseGamma { shape, scale } = &p.idio else { panic!() };
        let col = s.column("idio_var[1]").unwrap();
        let m = col.iter().sum::<f64>() / col.len() as f64;
        let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (col.len() - 1) as f64;
        assert!((scale[0] / (shape[0] - 1.0) - m).abs() < 1e-12);
        let ig_var = scale[0].powi(2) / ((shape[0] - 1.0).powi(2) * (shape[0] - 2.0));
        assert!((ig_var - v).abs() / v < 1e-9);
    }

    #[test]
    fn pad_and_truncate() {
        let s2 = spec(2, true);
        let s3 = spec(3, true);
        let data = simulate(&s3, 4).unwrap();
        let path3 = FactorPath::from_values(data.true_factors.clone().unwrap(), &s3, &data).unwrap();
        assert_eq!(pad_or_truncate(&path3, &s3, &data).unwrap(), path3);
        let p2 = pad_or_truncate(&path3, &s2, &data).unwrap();
        assert_eq!(p2.values, path3.values.columns(0, 2).into_owned());
        let back = pad_or_truncate(&p2, &s3, &data).unwrap();
        assert!(back.values.column(2).iter().all(|x| *x == 0.0));
        assert_eq!(back.values.columns(0, 2), p2.values.columns(0, 2));
        assert_eq!(FactorPath::from_values(back.values.clone(), &s3, &data).unwrap(), back);
    }

    #[test]
    fn identity_move_is_always_accepted() {
        let t1 = spec(1, false);
        let t2 = spec(2, false);
        let data = simulate(&t2, 6).unwrap();
        let proposals = vec![
            fit_proposal(&store_around(&t1, 100, 1), &t1, 2.0, 2.0).unwrap(),
            fit_proposal(&store_around(&t2, 100, 2), &t2, 2.0, 2.0).unwrap(),
        ];
        let prior = RjPrior::uniform(2, 1.0, IgPrior::new(0.2, 5.0).unwrap());
        // Zero-dynamics factors keep the likelihood exact and the GARCH
        // block fixed.
        assert!(matches!(proposals[1].factor_garch, BlockProposal::Fixed(_)));
        let state = RjState { spec: t2.clone(), loglik_hat: 0.0, path: FactorPath::zeros(&t2, &data).unwrap() };
        for seed in 0..20 {
            let out = rj_move_to(&state, 2, Some(t2.clone()), &proposals, &data, 7, &prior, seed).unwrap();
            assert!(out.log_alpha.abs() < 1e-9);
            assert!(out.accepted);
            assert_eq!(out.state.spec, t2);
        }
        let rejected = rj_move_to(&state, 1, None, &proposals, &data, 7, &prior, 1).unwrap();
        assert!(!rejected.accepted);
        assert_eq!(rejected.state.spec, t2);
    }

    #[test]
    fn single_model_stays_put() {
        let t1 = spec(1, true);
        let data = simulate(&t1, 8).unwrap();
        let proposals = vec![fit_proposal(&store_around(&t1, 100, 1), &t1, 2.0, 2.0).unwrap()];
        let prior = RjPrior::uniform(1, 1.0, IgPrior::new(0.2, 5.0).unwrap());
        let mut state = RjState { spec: t1.clone(), loglik_hat: 0.0, path: FactorPath::zeros(&t1, &data).unwrap() };
        for seed in 0..10 {
            let out = rj_move(&state, &proposals, &data, 5, &prior, seed).unwrap();
            assert_eq!(out.proposed_k, 1);
            state = out.state;
            assert_eq!(state.k(), 1);
        }
    }

    #[test]
    fn bundle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t1 = spec(1, true);
        let t2 = spec(2, true);
        let mut fixed = DrawStore::new(columns::parameter_names(&t2));
        fixed.push(columns::parameter_values(&t2)).unwrap();
        fixed.push(columns::parameter_values(&t2)).unwrap();
        let proposals =
            vec![fit_proposal(&store_around(&t1, 100, 1), &t1, 2.0, 3.0).unwrap(), fit_proposal(&fixed, &t2, 2.0, 2.0).unwrap()];
        let p = dir.path().join("proposals.csv");
        write_proposal_bundle(&p, &proposals).unwrap();
        let back = read_proposal_bundle(&p, &[t1, t2]).unwrap();
        assert_eq!(back, proposals);
    }
}
