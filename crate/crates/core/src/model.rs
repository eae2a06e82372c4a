//! Model definition: GARCH variance recursions, the factor model
//! specification, and forward simulation.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, tag};

/// Tolerance used when checking the unit-variance restriction.
pub const UNIT_VARIANCE_TOL: f64 = 1e-12;

/// One GARCH(1,1) variance process.
///
/// `innov_coef` multiplies the lagged squared innovation and `lag_coef`
/// multiplies the lagged variance. `leverage` is the GARCH-in-mean
/// coefficient and is only present for factors of a GARCH-M model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GarchParams {
    pub intercept: f64,
    pub innov_coef: f64,
    pub lag_coef: f64,
    pub leverage: Option<f64>,
}

impl GarchParams {
    pub fn new(intercept: f64, innov_coef: f64, lag_coef: f64) -> Result<Self> {
        let p = GarchParams { intercept, innov_coef, lag_coef, leverage: None };
        p.validate()?;
        Ok(p)
    }

    /// Parameters whose unconditional variance is exactly one.
    pub fn unit_variance(innov_coef: f64, lag_coef: f64) -> Result<Self> {
        Self::new(1.0 - innov_coef - lag_coef, innov_coef, lag_coef)
    }

    pub fn with_leverage(mut self, leverage: f64) -> Self {
        self.leverage = Some(leverage);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let GarchParams { intercept, innov_coef, lag_coef, leverage } = *self;
        if !(intercept.is_finite() && innov_coef.is_finite() && lag_coef.is_finite()) {
            return Err(Error::domain(format!("non-finite GARCH parameters {self:?}")));
        }
        if intercept < 0.0 || innov_coef < 0.0 || lag_coef < 0.0 {
            return Err(Error::domain(format!("negative GARCH parameters {self:?}")));
        }
        if innov_coef + lag_coef >= 1.0 {
            return Err(Error::domain(format!("nonstationary GARCH parameters: innov + lag = {} >= 1", innov_coef + lag_coef)));
        }
        if intercept == 0.0 && innov_coef == 0.0 && lag_coef == 0.0 {
            return Err(Error::domain("degenerate GARCH process with all coefficients zero"));
        }
        if let Some(tau) = leverage {
            if !tau.is_finite() {
                return Err(Error::domain("non-finite leverage"));
            }
        }
        Ok(())
    }

    pub fn persistence(&self) -> f64 {
        self.innov_coef + self.lag_coef
    }

    /// `intercept / (1 - innov - lag)`.
    pub fn unconditional_variance(&self) -> Result<f64> {
        let gap = 1.0 - self.innov_coef - self.lag_coef;
        if !(gap > 0.0) {
            return Err(Error::domain(format!("unconditional variance undefined: innov + lag = {}", self.innov_coef + self.lag_coef)));
        }
        Ok(self.intercept / gap)
    }

    /// One step of the variance recursion.
    #[inline]
    pub fn step(&self, lambda: f64, innovation: f64) -> f64 {
        self.intercept + self.innov_coef * innovation * innovation + self.lag_coef * lambda
    }

    /// GARCH-in-mean conditional mean; zero when no leverage is set.
    #[inline]
    pub fn conditional_mean(&self, lambda: f64) -> f64 {
        self.leverage.map_or(0.0, |tau| tau * lambda)
    }

    pub fn is_unit_variance(&self) -> bool {
        (self.intercept - (1.0 - self.innov_coef - self.lag_coef)).abs() <= UNIT_VARIANCE_TOL
    }
}

/// How the rotational indeterminacy of the loadings is removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Identification {
    /// Lower triangular loadings with ones on the diagonal; factor variances free.
    TriangularUnitDiag,
    /// Lower triangular loadings, unit unconditional factor variances.
    TriangularUnitVariance,
    /// Unrestricted loadings drawn with the reordering-invariant update.
    Invariant,
}

impl Identification {
    /// Whether factor GARCH intercepts are tied to `1 - innov - lag`.
    pub fn unit_variance(self) -> bool {
        !matches!(self, Identification::TriangularUnitDiag)
    }

    pub fn is_triangular(self) -> bool {
        !matches!(self, Identification::Invariant)
    }

    /// Whether loading `(i, j)` is a free parameter.
    pub fn is_free(self, i: usize, j: usize) -> bool {
        match self {
            Identification::TriangularUnitDiag => j < i,
            Identification::TriangularUnitVariance => j <= i,
            Identification::Invariant => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanMode {
    ZeroMean,
    GarchInMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdioMode {
    Constant,
    Garch,
}

/// Idiosyncratic variance specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum IdioSpec {
    /// Time-invariant diagonal of the error covariance.
    Constant(DVector<f64>),
    /// One GARCH process per series.
    Garch(Vec<GarchParams>),
}

impl IdioSpec {
    pub fn mode(&self) -> IdioMode {
        match self {
            IdioSpec::Constant(_) => IdioMode::Constant,
            IdioSpec::Garch(_) => IdioMode::Garch,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            IdioSpec::Constant(v) => v.len(),
            IdioSpec::Garch(g) => g.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Variances at the first period.
    pub fn initial_variances(&self) -> Result<DVector<f64>> {
        match self {
            IdioSpec::Constant(v) => Ok(v.clone()),
            IdioSpec::Garch(g) => g.iter().map(|p| p.unconditional_variance()).collect::<Result<Vec<_>>>().map(DVector::from_vec),
        }
    }
}

/// Full specification of a latent factor GARCH model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub n_series: usize,
    pub n_factors: usize,
    pub n_periods: usize,
    pub factor_garch: Vec<GarchParams>,
    pub idio: IdioSpec,
    /// N x K loading matrix.
    pub loadings: DMatrix<f64>,
    pub identification: Identification,
    pub mean_mode: MeanMode,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let (n, k) = (self.n_series, self.n_factors);
        if n == 0 || k == 0 {
            return Err(Error::domain("model needs at least one series and one factor"));
        }
        if k > n {
            return Err(Error::domain(format!("{k} factors exceed {n} series")));
        }
        if self.loadings.shape() != (n, k) {
            return Err(Error::domain(format!("loadings are {:?}, expected ({n}, {k})", self.loadings.shape())));
        }
        if self.loadings.iter().any(|b| !b.is_finite()) {
            return Err(Error::domain("non-finite loadings"));
        }
        if self.factor_garch.len() != k {
            return Err(Error::domain(format!("{} factor GARCH processes for {k} factors", self.factor_garch.len())));
        }
        for p in &self.factor_garch {
            p.validate()?;
            if self.identification.unit_variance() && !p.is_unit_variance() {
                return Err(Error::domain(format!("unit-variance identification requires intercept = 1 - innov - lag, got {p:?}")));
            }
            match (self.mean_mode, p.leverage) {
                (MeanMode::GarchInMean, None) => return Err(Error::domain("GARCH-in-mean factors need a leverage value")),
                (MeanMode::ZeroMean, Some(_)) => return Err(Error::domain("zero-mean factors cannot carry a leverage value")),
                _ => {}
            }
        }
        if self.idio.len() != n {
            return Err(Error::domain(format!("{} idiosyncratic processes for {n} series", self.idio.len())));
        }
        match &self.idio {
            IdioSpec::Constant(v) => {
                if v.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
                    return Err(Error::domain("idiosyncratic variances must be finite and nonnegative"));
                }
            }
            IdioSpec::Garch(g) => {
                for p in g {
                    p.validate()?;
                }
            }
        }
        match self.identification {
            Identification::TriangularUnitDiag | Identification::TriangularUnitVariance => {
                for i in 0..n {
                    for j in 0..k {
                        if j > i && self.loadings[(i, j)] != 0.0 {
                            return Err(Error::domain(format!("triangular identification requires loading ({i}, {j}) = 0")));
                        }
                    }
                }
                if self.identification == Identification::TriangularUnitDiag {
                    for i in 0..k {
                        if self.loadings[(i, i)] != 1.0 {
                            return Err(Error::domain(format!("unit-diagonal identification requires loading ({i}, {i}) = 1")));
                        }
                    }
                }
            }
            Identification::Invariant => {
                if self.mean_mode != MeanMode::ZeroMean {
                    return Err(Error::domain("invariant loadings are not valid for GARCH-in-mean factors"));
                }
                if self.idio.mode() != IdioMode::Constant {
                    return Err(Error::domain("invariant loadings require constant idiosyncratic variances"));
                }
            }
        }
        if !has_full_column_rank(&self.loadings) {
            return Err(Error::domain("loadings do not have full column rank"));
        }
        Ok(())
    }

    /// Factor variances at the first period.
    pub fn initial_factor_variances(&self) -> Result<DVector<f64>> {
        self.factor_garch.iter().map(|p| p.unconditional_variance()).collect::<Result<Vec<_>>>().map(DVector::from_vec)
    }

    pub fn leverages(&self) -> Vec<f64> {
        self.factor_garch.iter().map(|p| p.leverage.unwrap_or(0.0)).collect()
    }
}

pub(crate) fn has_full_column_rank(m: &DMatrix<f64>) -> bool {
    if m.ncols() == 0 {
        return true;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    max > 0.0 && sv.min() > 1e-10 * max
}

/// Observed panel plus, for simulated data, the generating factor paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// T x N observations.
    pub observations: DMatrix<f64>,
    /// T x K factor values.
    pub true_factors: Option<DMatrix<f64>>,
    /// T x K factor conditional variances.
    pub true_factor_variances: Option<DMatrix<f64>>,
}

impl Dataset {
    pub fn new(observations: DMatrix<f64>) -> Result<Self> {
        if observations.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain("observations contain non-finite values"));
        }
        Ok(Dataset { observations, true_factors: None, true_factor_variances: None })
    }

    pub fn n_periods(&self) -> usize {
        self.observations.nrows()
    }

    pub fn n_series(&self) -> usize {
        self.observations.ncols()
    }

    /// Writes one row per period, one column per series.
    pub fn write_csv(&self, path: impl AsRef<Path>, header: bool) -> Result<()> {
        write_matrix_csv(path, &self.observations, header.then_some("series"))
    }

    /// Reads observations; a non-numeric first row is taken as a header.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        Dataset::new(read_matrix_csv(path)?)
    }
}

pub(crate) fn write_matrix_csv(path: impl AsRef<Path>, m: &DMatrix<f64>, header: Option<&str>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if let Some(prefix) = header {
        w.write_record((1..=m.ncols()).map(|j| format!("{prefix}_{j}")))?;
    }
    for row in m.row_iter() {
        w.write_record(row.iter().map(|x| format!("{x:?}")))?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn read_matrix_csv(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = idx + 1;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(|s| s.trim().parse::<f64>()).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if idx == 0 => continue,
            Err(e) => return Err(Error::Load { path: shown, line, message: format!("non-numeric cell: {e}") }),
        };
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Error::Load { path: shown, line, message: format!("expected {w} columns, found {}", values.len()) })
            }
            _ => {}
        }
        rows.push(values);
    }
    let ncols = width.unwrap_or(0);
    Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.into_iter().flatten()))
}

/// Draws a dataset from `spec`.
///
/// Factor draws and idiosyncratic draws come from separate substreams of
/// `seed`. All variance recursions start at their unconditional values.
pub fn simulate(spec: &ModelSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let (t_len, n, k) = (spec.n_periods, spec.n_series, spec.n_factors);
    let mut factor_rng = rng_from_seed(derive_seed(seed, &[tag::SIM_FACTORS]));
    let mut idio_rng = rng_from_seed(derive_seed(seed, &[tag::SIM_IDIO]));

    let mut lambda_f = spec.initial_factor_variances()?;
    let mut lambda_e = spec.idio.initial_variances()?;

    let mut obs = DMatrix::zeros(t_len, n);
    let mut factors = DMatrix::zeros(t_len, k);
    let mut fvars = DMatrix::zeros(t_len, k);
    let mut f = DVector::zeros(k);
    for t in 0..t_len {
        for j in 0..k {
            let p = &spec.factor_garch[j];
            let z: f64 = StandardNormal.sample(&mut factor_rng);
            f[j] = p.conditional_mean(lambda_f[j]) + lambda_f[j].sqrt() * z;
            fvars[(t, j)] = lambda_f[j];
            factors[(t, j)] = f[j];
        }
        let signal = &spec.loadings * &f;
        for i in 0..n {
            let z: f64 = StandardNormal.sample(&mut idio_rng);
            let eps = lambda_e[i].sqrt() * z;
            obs[(t, i)] = signal[i] + eps;
            if let IdioSpec::Garch(g) = &spec.idio {
                lambda_e[i] = g[i].step(lambda_e[i], eps);
            }
        }
        for j in 0..k {
            lambda_f[j] = spec.factor_garch[j].step(lambda_f[j], f[j]);
        }
    }
    Ok(Dataset { observations: obs, true_factors: Some(factors), true_factor_variances: Some(fvars) })
}
