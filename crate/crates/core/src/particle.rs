//! Fully adapted particle filtering for the factor path.
//!
//! [`fapf_loglik`] is the unconditional filter used to estimate the
//! likelihood. [`csmc_sweep`] is the conditional filter with ancestor
//! sampling that draws `f_{1:T}` inside the Gibbs sweep: particle slot 0
//! carries the reference path, the other slots are resampled in proportion
//! to their one-step predictive densities and propagated from the exact
//! conditional posterior of `f_t`.
//!
//! Every period after the first is fully adapted, so particle weights are
//! uniform after propagation. The first period draws from the factor prior
//! and weights by `p(y_1 | f_1)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{log_normal, log_sum_exp, ObservationTerms, Prediction, LN_2PI};
use crate::model::{Dataset, IdioSpec, ModelSpec};
use crate::rng::rng_from_seed;

/// Default look-ahead of the ancestor-sampling weights.
pub const DEFAULT_TRUNCATION: usize = 5;

/// A factor path together with the variance paths it implies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorPath {
    /// T x K factor values.
    pub values: DMatrix<f64>,
    /// T x K factor conditional variances.
    pub factor_var_path: DMatrix<f64>,
    /// T x N idiosyncratic conditional variances.
    pub idio_var_path: DMatrix<f64>,
}

impl FactorPath {
    /// Builds the variance paths for `values` by running the recursions
    /// forward from their unconditional values.
    pub fn from_values(values: DMatrix<f64>, spec: &ModelSpec, data: &Dataset) -> Result<Self> {
        let (t_len, k) = values.shape();
        let n = spec.n_series;
        if k != spec.n_factors || t_len != data.n_periods() || data.n_series() != n {
            return Err(Error::domain(format!(
                "factor path is {t_len}x{k}; model expects {}x{} over {} series",
                data.n_periods(),
                spec.n_factors,
                n
            )));
        }
        let mut lf = spec.initial_factor_variances()?;
        let mut le = spec.idio.initial_variances()?;
        let mut fv = DMatrix::zeros(t_len, k);
        let mut ev = DMatrix::zeros(t_len, n);
        for t in 0..t_len {
            fv.row_mut(t).copy_from(&lf.transpose());
            ev.row_mut(t).copy_from(&le.transpose());
            for j in 0..k {
                lf[j] = spec.factor_garch[j].step(lf[j], values[(t, j)]);
            }
            if let IdioSpec::Garch(g) = &spec.idio {
                for i in 0..n {
                    let fit: f64 = (0..k).map(|j| spec.loadings[(i, j)] * values[(t, j)]).sum();
                    le[i] = g[i].step(le[i], data.observations[(t, i)] - fit);
                }
            }
        }
        Ok(FactorPath { values, factor_var_path: fv, idio_var_path: ev })
    }

    /// The all-zero path.
    pub fn zeros(spec: &ModelSpec, data: &Dataset) -> Result<Self> {
        Self::from_values(DMatrix::zeros(data.n_periods(), spec.n_factors), spec, data)
    }

    pub fn n_periods(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_factors(&self) -> usize {
        self.values.ncols()
    }
}

/// One generation of particles after propagation to period `t`.
///
/// `next_factor_vars` and `next_idio_vars` hold each particle's variances
/// for period `t + 1`, which depend on its own history.
#[derive(Debug, Clone)]
pub struct ParticleSystem {
    /// M x K values `f_t`.
    pub factors: DMatrix<f64>,
    /// M x K variances `λ^F_{t+1}`.
    pub next_factor_vars: DMatrix<f64>,
    /// M x N variances `λ^E_{t+1}`; identical rows under constant variances.
    pub next_idio_vars: DMatrix<f64>,
    pub log_weights: Vec<f64>,
    /// Slot holding the reference lineage.
    pub retained_index: usize,
}

impl ParticleSystem {
    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }
}

/// Draws an index with probability proportional to `exp(log_weights)`.
pub fn sample_index<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> Option<usize> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let total: f64 = log_weights.iter().map(|w| (w - max).exp()).sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in log_weights.iter().enumerate() {
        let p = (w - max).exp();
        if u < p {
            return Some(i);
        }
        u -= p;
    }
    log_weights.iter().rposition(|w| (w - max).exp() > 0.0)
}

/// Multinomial resampling: `count` independent ancestor draws.
pub fn multinomial_resample<R: Rng + ?Sized>(log_weights: &[f64], count: usize, rng: &mut R) -> Option<Vec<usize>> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let mut cumulative = Vec::with_capacity(log_weights.len());
    let mut acc = 0.0;
    for w in log_weights {
        acc += (w - max).exp();
        cumulative.push(acc);
    }
    Some(
        (0..count)
            .map(|_| {
                let u = rng.random::<f64>() * acc;
                cumulative.partition_point(|&c| c <= u).min(log_weights.len() - 1)
            })
            .collect(),
    )
}

/// Data and parameters laid out for the inner loops.
struct FilterModel<'a> {
    spec: &'a ModelSpec,
    /// T x N observations, row major.
    y: Vec<f64>,
    t_len: usize,
    n: usize,
    k: usize,
    leverage: Vec<f64>,
    init_factor_vars: Vec<f64>,
    init_idio_vars: Vec<f64>,
    /// Shared observation terms per period under constant idiosyncratic variances.
    shared_terms: Option<Vec<ObservationTerms>>,
}

impl<'a> FilterModel<'a> {
    fn new(data: &'a Dataset, spec: &'a ModelSpec) -> Result<Self> {
        spec.validate()?;
        let (t_len, n) = data.observations.shape();
        if n != spec.n_series {
            return Err(Error::domain(format!("data has {n} series, model expects {}", spec.n_series)));
        }
        let y: Vec<f64> = (0..t_len).flat_map(|t| (0..n).map(move |i| (t, i))).map(|(t, i)| data.observations[(t, i)]).collect();
        let init_idio_vars = spec.idio.initial_variances()?.as_slice().to_vec();
        let shared_terms = match &spec.idio {
            IdioSpec::Constant(_) => Some(
                (0..t_len)
                    .map(|t| ObservationTerms::new(&y[t * n..(t + 1) * n], &spec.loadings, &init_idio_vars))
                    .collect::<Result<Vec<_>>>()?,
            ),
            IdioSpec::Garch(_) => None,
        };
        Ok(FilterModel {
            spec,
            t_len,
            n,
            k: spec.n_factors,
            leverage: spec.leverages(),
            init_factor_vars: spec.initial_factor_variances()?.as_slice().to_vec(),
            init_idio_vars,
            y,
            shared_terms,
        })
    }

    fn y_row(&self, t: usize) -> &[f64] {
        &self.y[t * self.n..(t + 1) * self.n]
    }

    fn residual(&self, t: usize, f: &[f64], out: &mut [f64]) {
        let y = self.y_row(t);
        for i in 0..self.n {
            let mut fit = 0.0;
            for j in 0..self.k {
                fit += self.spec.loadings[(i, j)] * f[j];
            }
            out[i] = y[i] - fit;
        }
    }

    fn shift(&self, factor_vars: &[f64]) -> Vec<f64> {
        factor_vars.iter().zip(&self.leverage).map(|(v, tau)| tau * v).collect()
    }

    fn predict(&self, t: usize, factor_vars: &[f64], idio_vars: &[f64]) -> Result<Prediction> {
        let shift = self.shift(factor_vars);
        match &self.shared_terms {
            Some(terms) => terms[t].predict(&shift, factor_vars),
            None => ObservationTerms::new(self.y_row(t), &self.spec.loadings, idio_vars)?.predict(&shift, factor_vars),
        }
    }

    /// Advances one particle's variances past period `t` given its value `f`.
    fn propagate(&self, t: usize, f: &[f64], fvars: &[f64], evars: &[f64], next_f: &mut [f64], next_e: &mut [f64], resid: &mut [f64]) {
        for j in 0..self.k {
            next_f[j] = self.spec.factor_garch[j].step(fvars[j], f[j]);
        }
        match &self.spec.idio {
            IdioSpec::Constant(_) => next_e.copy_from_slice(evars),
            IdioSpec::Garch(g) => {
                self.residual(t, f, resid);
                for i in 0..self.n {
                    next_e[i] = g[i].step(evars[i], resid[i]);
                }
            }
        }
    }

    fn prior_draw<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for j in 0..self.k {
            let v = self.init_factor_vars[j];
            let z: f64 = rng.sample(StandardNormal);
            out[j] = self.leverage[j] * v + v.sqrt() * z;
        }
    }
}

fn row(m: &DMatrix<f64>, r: usize) -> Vec<f64> {
    m.row(r).iter().copied().collect()
}

/// Log backward weights for attaching the reference tail to each particle.
///
/// For particle `k` of `system` (propagated to period `t`) this is its log
/// weight plus `Σ_{s=t+1}^{min(T-1, t+trunc)} log p(y_s | f̂_s, Λ_s) + log p(f̂_s | Λ^F_s)`,
/// where `f̂` is the reference path and the variances `Λ_s` are propagated
/// forward from the particle's own state through the reference values.
pub fn ancestor_weights(
    data: &Dataset,
    spec: &ModelSpec,
    t: usize,
    system: &ParticleSystem,
    reference: &FactorPath,
    trunc: usize,
) -> Result<Vec<f64>> {
    if trunc == 0 {
        return Err(Error::domain("ancestor truncation must be at least 1"));
    }
    let model = FilterModel::new(data, spec)?;
    let tail = ReferenceTail::new(&model, reference);
    Ok(tail.log_weights(&model, t, system, trunc))
}

struct ReferenceTail {
    values: Vec<f64>,
    residuals: Vec<f64>,
}

impl ReferenceTail {
    fn new(model: &FilterModel<'_>, reference: &FactorPath) -> Self {
        let (k, n) = (model.k, model.n);
        let mut values = vec![0.0; model.t_len * k];
        let mut residuals = vec![0.0; model.t_len * n];
        for t in 0..model.t_len {
            for j in 0..k {
                values[t * k + j] = reference.values[(t, j)];
            }
            let (v, r) = (&values[t * k..(t + 1) * k], &mut residuals[t * n..(t + 1) * n]);
            model.residual(t, v, r);
        }
        ReferenceTail { values, residuals }
    }

    fn log_weights(&self, model: &FilterModel<'_>, t: usize, system: &ParticleSystem, trunc: usize) -> Vec<f64> {
        let (k, n) = (model.k, model.n);
        let end = (t + trunc).min(model.t_len.saturating_sub(1));
        let const_idio = model.shared_terms.is_some();
        // Under constant idiosyncratic variances the observation term does
        // not depend on the particle.
        let shared_obs: f64 = if const_idio {
            (t + 1..=end)
                .map(|s| {
                    self.residuals[s * n..(s + 1) * n]
                        .iter()
                        .zip(&model.init_idio_vars)
                        .map(|(r, v)| -0.5 * (LN_2PI + v.ln() + r * r / v))
                        .sum::<f64>()
                })
                .sum()
        } else {
            0.0
        };
        let mut lf = vec![0.0; k];
        let mut le = vec![0.0; n];
        (0..system.len())
            .map(|p| {
                let mut lw = system.log_weights[p] + shared_obs;
                for j in 0..k {
                    lf[j] = system.next_factor_vars[(p, j)];
                }
                if !const_idio {
                    for i in 0..n {
                        le[i] = system.next_idio_vars[(p, i)];
                    }
                }
                for s in t + 1..=end {
                    let x = &self.values[s * k..(s + 1) * k];
                    for j in 0..k {
                        let g = &model.spec.factor_garch[j];
                        lw += log_normal(x[j], model.leverage[j] * lf[j], lf[j]);
                        lf[j] = g.step(lf[j], x[j]);
                    }
                    if let IdioSpec::Garch(gs) = &model.spec.idio {
                        let r = &self.residuals[s * n..(s + 1) * n];
                        for i in 0..n {
                            lw += -0.5 * (LN_2PI + le[i].ln() + r[i] * r[i] / le[i]);
                            le[i] = gs[i].step(le[i], r[i]);
                        }
                    }
                }
                lw
            })
            .collect()
    }
}

fn initial_system<R: Rng + ?Sized>(model: &FilterModel<'_>, m: usize, reference: Option<&FactorPath>, rng: &mut R) -> ParticleSystem {
    let (k, n) = (model.k, model.n);
    let mut factors = DMatrix::zeros(m, k);
    let mut nf = DMatrix::zeros(m, k);
    let mut ne = DMatrix::zeros(m, n);
    let mut log_weights = vec![0.0; m];
    let mut f = vec![0.0; k];
    let mut next_f = vec![0.0; k];
    let mut next_e = vec![0.0; n];
    let mut resid = vec![0.0; n];
    for p in 0..m {
        match reference {
            Some(r) if p == 0 => f.iter_mut().enumerate().for_each(|(j, x)| *x = r.values[(0, j)]),
            _ => model.prior_draw(rng, &mut f),
        }
        model.residual(0, &f, &mut resid);
        log_weights[p] = resid.iter().zip(&model.init_idio_vars).map(|(r, v)| -0.5 * (LN_2PI + v.ln() + r * r / v)).sum();
        model.propagate(0, &f, &model.init_factor_vars, &model.init_idio_vars, &mut next_f, &mut next_e, &mut resid);
        factors.row_mut(p).copy_from_slice(&f);
        nf.row_mut(p).copy_from_slice(&next_f);
        ne.row_mut(p).copy_from_slice(&next_e);
    }
    ParticleSystem { factors, next_factor_vars: nf, next_idio_vars: ne, log_weights, retained_index: 0 }
}

fn predictions(model: &FilterModel<'_>, t: usize, system: &ParticleSystem) -> Result<Vec<Prediction>> {
    (0..system.len())
        .map(|p| {
            let fv = row(&system.next_factor_vars, p);
            let ev = if model.shared_terms.is_some() { Vec::new() } else { row(&system.next_idio_vars, p) };
            model.predict(t, &fv, &ev)
        })
        .collect()
}

/// Propagates `parents` into period `t`: slot `p` takes value `values[p]`.
fn next_system(model: &FilterModel<'_>, t: usize, parent: &ParticleSystem, ancestors: &[usize], values: Vec<Vec<f64>>) -> ParticleSystem {
    let (k, n, m) = (model.k, model.n, ancestors.len());
    let mut factors = DMatrix::zeros(m, k);
    let mut nf = DMatrix::zeros(m, k);
    let mut ne = DMatrix::zeros(m, n);
    let mut next_f = vec![0.0; k];
    let mut next_e = vec![0.0; n];
    let mut resid = vec![0.0; n];
    for (p, (&a, f)) in ancestors.iter().zip(values).enumerate() {
        let fv = row(&parent.next_factor_vars, a);
        let ev = row(&parent.next_idio_vars, a);
        model.propagate(t, &f, &fv, &ev, &mut next_f, &mut next_e, &mut resid);
        factors.row_mut(p).copy_from_slice(&f);
        nf.row_mut(p).copy_from_slice(&next_f);
        ne.row_mut(p).copy_from_slice(&next_e);
    }
    ParticleSystem { factors, next_factor_vars: nf, next_idio_vars: ne, log_weights: vec![0.0; m], retained_index: 0 }
}

/// Fully adapted particle filter estimate of `log p(y_{1:T})`.
///
/// The estimate is the sum over periods of the log of the mean one-step
/// predictive density across particles. When the variance processes have no
/// dynamics every particle predicts identically and the estimate is exact.
pub fn fapf_loglik(data: &Dataset, spec: &ModelSpec, particles: usize, seed: u64) -> Result<f64> {
    if particles == 0 {
        return Err(Error::domain("at least one particle is required"));
    }
    let model = FilterModel::new(data, spec)?;
    if model.t_len == 0 {
        return Ok(0.0);
    }
    let mut rng = rng_from_seed(seed);
    let first = model.predict(0, &model.init_factor_vars, &model.init_idio_vars)?;
    let mut loglik = first.log_lik;
    let values: Vec<Vec<f64>> = (0..particles).map(|_| first.sample(&mut rng).as_slice().to_vec()).collect();
    let root = ParticleSystem {
        factors: DMatrix::zeros(1, model.k),
        next_factor_vars: DMatrix::from_row_slice(1, model.k, &model.init_factor_vars),
        next_idio_vars: DMatrix::from_row_slice(1, model.n, &model.init_idio_vars),
        log_weights: vec![0.0],
        retained_index: 0,
    };
    // `next_system` reads the parent's next-period variances, which for the
    // root are the initial variances, i.e. period 0's.
    let mut system = next_system(&model, 0, &root, &vec![0; particles], values);
    let ln_m = (particles as f64).ln();
    for t in 1..model.t_len {
        let preds = predictions(&model, t, &system)?;
        let weights: Vec<f64> = preds.iter().map(|p| p.log_lik).collect();
        let lse = log_sum_exp(&weights);
        if !lse.is_finite() {
            return Err(Error::Degenerate { period: t });
        }
        loglik += lse - ln_m;
        let ancestors = multinomial_resample(&weights, particles, &mut rng).ok_or(Error::Degenerate { period: t })?;
        let values = ancestors.iter().map(|&a| preds[a].sample(&mut rng).as_slice().to_vec()).collect();
        system = next_system(&model, t, &system, &ancestors, values);
    }
    Ok(loglik)
}

/// One conditional SMC sweep with ancestor sampling.
///
/// Returns a new factor path drawn given `reference`, leaving the
/// conditional posterior of the path invariant when `trunc` covers the
/// remaining periods (and approximately so for shorter look-aheads).
pub fn csmc_sweep(
    data: &Dataset,
    spec: &ModelSpec,
    reference: &FactorPath,
    particles: usize,
    trunc: usize,
    seed: u64,
) -> Result<FactorPath> {
    if particles == 0 {
        return Err(Error::domain("at least one particle is required"));
    }
    if trunc == 0 {
        return Err(Error::domain("ancestor truncation must be at least 1"));
    }
    let model = FilterModel::new(data, spec)?;
    if reference.values.shape() != (model.t_len, model.k) {
        return Err(Error::domain(format!("reference path is {:?}, expected ({}, {})", reference.values.shape(), model.t_len, model.k)));
    }
    if model.t_len == 0 {
        return FactorPath::from_values(DMatrix::zeros(0, model.k), spec, data);
    }
    let mut rng = rng_from_seed(seed);
    let tail = ReferenceTail::new(&model, reference);

    let mut system = initial_system(&model, particles, Some(reference), &mut rng);
    let mut history: Vec<DMatrix<f64>> = Vec::with_capacity(model.t_len);
    let mut lineage: Vec<Vec<usize>> = Vec::with_capacity(model.t_len);
    lineage.push((0..particles).collect());

    for t in 1..model.t_len {
        let preds = predictions(&model, t, &system)?;
        let weights: Vec<f64> = preds.iter().zip(&system.log_weights).map(|(p, w)| w + p.log_lik).collect();
        let backward = tail.log_weights(&model, t - 1, &system, trunc);
        let mut ancestors = Vec::with_capacity(particles);
        ancestors.push(sample_index(&backward, &mut rng).ok_or(Error::Degenerate { period: t })?);
        ancestors.extend(multinomial_resample(&weights, particles - 1, &mut rng).ok_or(Error::Degenerate { period: t })?);

        let mut values = Vec::with_capacity(particles);
        values.push(tail.values[t * model.k..(t + 1) * model.k].to_vec());
        for &a in &ancestors[1..] {
            values.push(preds[a].sample(&mut rng).as_slice().to_vec());
        }
        let next = next_system(&model, t, &system, &ancestors, values);
        history.push(std::mem::replace(&mut system, next).factors);
        lineage.push(ancestors);
    }
    let final_weights = system.log_weights.clone();
    history.push(system.factors);

    let mut idx = sample_index(&final_weights, &mut rng).ok_or(Error::Degenerate { period: model.t_len - 1 })?;
    let mut values = DMatrix::zeros(model.t_len, model.k);
    for t in (0..model.t_len).rev() {
        values.row_mut(t).copy_from(&history[t].row(idx));
        idx = lineage[t][idx];
    }
    FactorPath::from_values(values, spec, data)
}

/// Particles' predictive log densities for period `t`, exposed for testing
/// and diagnostics.
pub fn prediction_log_weights(data: &Dataset, spec: &ModelSpec, t: usize, system: &ParticleSystem) -> Result<Vec<f64>> {
    let model = FilterModel::new(data, spec)?;
    Ok(predictions(&model, t, system)?.iter().map(|p| p.log_lik).collect())
}

/// Builds the particle system a sweep would hold after period 0, for tests
/// of [`ancestor_weights`].
pub fn first_period_system(
    data: &Dataset,
    spec: &ModelSpec,
    particles: usize,
    reference: &FactorPath,
    seed: u64,
) -> Result<ParticleSystem> {
    let model = FilterModel::new(data, spec)?;
    let mut rng = rng_from_seed(seed);
    Ok(initial_system(&model, particles, Some(reference), &mut rng))
}

/// `Σ_t log N(y_t; β m_t, β Λ^F β' + Λ^E)` for a model whose variances do
/// not move: the exact likelihood the filter reproduces in that case.
pub fn static_loglik(data: &Dataset, spec: &ModelSpec) -> Result<f64> {
    let lf = spec.initial_factor_variances()?;
    let le = spec.idio.initial_variances()?;
    let shift = DVector::from_iterator(spec.n_factors, lf.iter().zip(spec.leverages()).map(|(v, tau)| v * tau));
    let mut total = 0.0;
    for t in 0..data.n_periods() {
        let y = data.observations.row(t).transpose();
        total += crate::kernels::marginal_loglik(&y, &shift, &spec.loadings, &lf, &le)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{simulate, GarchParams, Identification, MeanMode};
    use rand::SeedableRng;

    pub(crate) fn small_spec(t: usize, n: usize, k: usize, dynamics: bool) -> ModelSpec {
        let g = if dynamics { GarchParams::unit_variance(0.1, 0.8).unwrap() } else { GarchParams::new(1.0, 0.0, 0.0).unwrap() };
        let mut loadings = DMatrix::zeros(n, k);
        for i in 0..n {
            for j in 0..k.min(i + 1) {
                loadings[(i, j)] = if i == j { 1.0 } else { 0.5 - 0.2 * (i + j) as f64 };
            }
        }
        ModelSpec {
            n_series: n,
            n_factors: k,
            n_periods: t,
            factor_garch: vec![g; k],
            idio: IdioSpec::Constant(DVector::from_element(n, 0.3)),
            loadings,
            identification: Identification::TriangularUnitDiag,
            mean_mode: MeanMode::ZeroMean,
        }
    }

    #[test]
    fn empty_data_has_zero_loglik() {
        let spec = small_spec(0, 3, 1, true);
        let data = Dataset::new(DMatrix::zeros(0, 3)).unwrap();
        assert_eq!(fapf_loglik(&data, &spec, 10, 1).unwrap(), 0.0);
    }

    #[test]
    fn zero_dynamics_filter_is_exact() {
        let spec = small_spec(30, 4, 2, false);
        let data = simulate(&spec, 4).unwrap();
        let exact = static_loglik(&data, &spec).unwrap();
        for (m, seed) in [(1, 0), (5, 1), (50, 2)] {
            let est = fapf_loglik(&data, &spec, m, seed).unwrap();
            assert!((est - exact).abs() < 1e-10, "M={m}: {est} vs {exact}");
        }
    }

    #[test]
    fn single_particle_sweep_returns_reference() {
        let spec = small_spec(25, 3, 2, true);
        let data = simulate(&spec, 8).unwrap();
        let reference = FactorPath::from_values(data.true_factors.clone().unwrap(), &spec, &data).unwrap();
        let out = csmc_sweep(&data, &spec, &reference, 1, 5, 99).unwrap();
        assert_eq!(out, reference);
    }

    #[test]
    fn sweep_is_seed_deterministic_and_consistent() {
        let mut spec = small_spec(40, 4, 2, true);
        spec.idio = IdioSpec::Garch(vec![GarchParams::new(0.05, 0.1, 0.8).unwrap(); 4]);
        let data = simulate(&spec, 2).unwrap();
        let reference = FactorPath::zeros(&spec, &data).unwrap();
        let a = csmc_sweep(&data, &spec, &reference, 8, 5, 5).unwrap();
        let b = csmc_sweep(&data, &spec, &reference, 8, 5, 5).unwrap();
        assert_eq!(a, b);
        let regenerated = FactorPath::from_values(a.values.clone(), &spec, &data).unwrap();
        assert_eq!(regenerated, a);
    }

    #[test]
    fn resampler_counts_are_uniform_for_equal_weights() {
        // Chi-square goodness of fit of pooled offspring counts.
        let m = 8;
        let mut counts = vec![0usize; m];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let reps = 5000;
        for _ in 0..reps {
            for a in multinomial_resample(&vec![-3.2; m], m, &mut rng).unwrap() {
                counts[a] += 1;
            }
        }
        let expected = (reps * m) as f64 / m as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 99.9% quantile of chi-square with 7 degrees of freedom.
        assert!(chi2 < 24.32, "chi2 = {chi2}, counts {counts:?}");
    }

    #[test]
    fn resampler_rejects_degenerate_weights() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        assert!(multinomial_resample(&[f64::NEG_INFINITY; 3], 3, &mut rng).is_none());
        assert!(sample_index(&[f64::NEG_INFINITY; 3], &mut rng).is_none());
        assert_eq!(sample_index(&[f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY], &mut rng), Some(1));
    }

    #[test]
    fn truncation_drops_exactly_the_tail_terms() {
        let spec = small_spec(8, 3, 1, true);
        let data = simulate(&spec, 21).unwrap();
        let reference = FactorPath::from_values(data.true_factors.clone().unwrap(), &spec, &data).unwrap();
        let system = first_period_system(&data, &spec, 6, &reference, 3).unwrap();
        let short = ancestor_weights(&data, &spec, 0, &system, &reference, 5).unwrap();
        let full = ancestor_weights(&data, &spec, 0, &system, &reference, 8).unwrap();
        let beyond = ancestor_weights(&data, &spec, 0, &system, &reference, 50).unwrap();
        assert_eq!(full, beyond);
        // Independent recomputation of the dropped periods 6..=7.
        let b = &spec.loadings;
        for p in 0..6 {
            let g = &spec.factor_garch[0];
            let mut lf = system.next_factor_vars[(p, 0)];
            let mut dropped = 0.0;
            for s in 1..8 {
                let x = reference.values[(s, 0)];
                if s > 5 {
                    dropped += log_normal(x, 0.0, lf);
                    for i in 0..3 {
                        dropped += log_normal(data.observations[(s, i)] - b[(i, 0)] * x, 0.0, 0.3);
                    }
                }
                lf = g.step(lf, x);
            }
            assert!((full[p] - short[p] - dropped).abs() < 1e-10);
        }
    }

    #[test]
    fn identical_particles_get_uniform_backward_weights() {
        let spec = small_spec(10, 3, 1, true);
        let data = simulate(&spec, 6).unwrap();
        let reference = FactorPath::zeros(&spec, &data).unwrap();
        let mut system = first_period_system(&data, &spec, 5, &reference, 1).unwrap();
        for p in 1..5 {
            let r = system.factors.row(0).clone_owned();
            system.factors.row_mut(p).copy_from(&r);
            let r = system.next_factor_vars.row(0).clone_owned();
            system.next_factor_vars.row_mut(p).copy_from(&r);
            system.log_weights[p] = system.log_weights[0];
        }
        let w = ancestor_weights(&data, &spec, 0, &system, &reference, 5).unwrap();
        assert!(w.iter().all(|x| *x == w[0]));
    }
}
