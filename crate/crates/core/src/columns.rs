//! Names of archived draw columns and conversion between parameter
//! values and archive rows. Indices in names are 1-based.

use nalgebra::{DMatrix, DVector};

use crate::diagnostics::DrawStore;
use crate::error::{Error, Result};
use crate::model::{GarchParams, IdioSpec, MeanMode, ModelSpec};

pub fn beta(i: usize, j: usize) -> String {
    format!("beta[{},{}]", i + 1, j + 1)
}

/// Reduced-form entry `(β f_t)_i`.
pub fn bf(t: usize, i: usize) -> String {
    format!("bf[{},{}]", t + 1, i + 1)
}

pub fn f_intercept(j: usize) -> String {
    format!("f_intercept[{}]", j + 1)
}

pub fn f_innov(j: usize) -> String {
    format!("f_innov[{}]", j + 1)
}

pub fn f_lag(j: usize) -> String {
    format!("f_lag[{}]", j + 1)
}

pub fn tau(j: usize) -> String {
    format!("tau[{}]", j + 1)
}

pub fn idio_var(i: usize) -> String {
    format!("idio_var[{}]", i + 1)
}

pub fn e_intercept(i: usize) -> String {
    format!("e_intercept[{}]", i + 1)
}

pub fn e_innov(i: usize) -> String {
    format!("e_innov[{}]", i + 1)
}

pub fn e_lag(i: usize) -> String {
    format!("e_lag[{}]", i + 1)
}

pub const K: &str = "k";

/// Free loading positions `(i, j)` in row-major order.
pub fn free_loadings(spec: &ModelSpec) -> Vec<(usize, usize)> {
    (0..spec.n_series).flat_map(|i| (0..spec.n_factors).map(move |j| (i, j))).filter(|&(i, j)| spec.identification.is_free(i, j)).collect()
}

pub fn loading_names(spec: &ModelSpec) -> Vec<String> {
    free_loadings(spec).into_iter().map(|(i, j)| beta(i, j)).collect()
}

pub fn factor_garch_names(spec: &ModelSpec) -> Vec<String> {
    let mut out = Vec::new();
    for j in 0..spec.n_factors {
        out.extend([f_intercept(j), f_innov(j), f_lag(j)]);
        if spec.mean_mode == MeanMode::GarchInMean {
            out.push(tau(j));
        }
    }
    out
}

pub fn idio_names(spec: &ModelSpec) -> Vec<String> {
    match spec.idio {
        IdioSpec::Constant(_) => (0..spec.n_series).map(idio_var).collect(),
        IdioSpec::Garch(_) => (0..spec.n_series).flat_map(|i| [e_intercept(i), e_innov(i), e_lag(i)]).collect(),
    }
}

/// All static-parameter columns: free loadings, factor GARCH, idiosyncratic.
pub fn parameter_names(spec: &ModelSpec) -> Vec<String> {
    let mut out = loading_names(spec);
    out.extend(factor_garch_names(spec));
    out.extend(idio_names(spec));
    out
}

pub fn loading_values(spec: &ModelSpec) -> Vec<f64> {
    free_loadings(spec).into_iter().map(|(i, j)| spec.loadings[(i, j)]).collect()
}

pub fn factor_garch_values(spec: &ModelSpec) -> Vec<f64> {
    let mut out = Vec::new();
    for p in &spec.factor_garch {
        out.extend([p.intercept, p.innov_coef, p.lag_coef]);
        if spec.mean_mode == MeanMode::GarchInMean {
            out.push(p.leverage.unwrap_or(0.0));
        }
    }
    out
}

pub fn idio_values(spec: &ModelSpec) -> Vec<f64> {
    match &spec.idio {
        IdioSpec::Constant(v) => v.iter().copied().collect(),
        IdioSpec::Garch(g) => g.iter().flat_map(|p| [p.intercept, p.innov_coef, p.lag_coef]).collect(),
    }
}

pub fn parameter_values(spec: &ModelSpec) -> Vec<f64> {
    let mut out = loading_values(spec);
    out.extend(factor_garch_values(spec));
    out.extend(idio_values(spec));
    out
}

/// Loadings with pinned entries from the identification and free entries
/// from `values` (in [`free_loadings`] order).
pub fn loadings_from_values(template: &ModelSpec, values: &[f64]) -> Result<DMatrix<f64>> {
    let free = free_loadings(template);
    if values.len() != free.len() {
        return Err(Error::domain(format!("{} loading values for {} free entries", values.len(), free.len())));
    }
    let (n, k) = (template.n_series, template.n_factors);
    let mut m = DMatrix::zeros(n, k);
    if !template.identification.unit_variance() {
        for i in 0..k {
            m[(i, i)] = 1.0;
        }
    }
    for (&(i, j), &v) in free.iter().zip(values) {
        m[(i, j)] = v;
    }
    Ok(m)
}

pub fn factor_garch_from_values(template: &ModelSpec, values: &[f64]) -> Result<Vec<GarchParams>> {
    let width = if template.mean_mode == MeanMode::GarchInMean { 4 } else { 3 };
    if values.len() != width * template.n_factors {
        return Err(Error::domain("factor GARCH value count does not match the model"));
    }
    values
        .chunks(width)
        .map(|c| {
            let p = GarchParams::new(c[0], c[1], c[2])?;
            Ok(if width == 4 { p.with_leverage(c[3]) } else { p })
        })
        .collect()
}

pub fn idio_from_values(template: &ModelSpec, values: &[f64]) -> Result<IdioSpec> {
    let n = template.n_series;
    match template.idio {
        IdioSpec::Constant(_) if values.len() == n => Ok(IdioSpec::Constant(DVector::from_column_slice(values))),
        IdioSpec::Garch(_) if values.len() == 3 * n => {
            Ok(IdioSpec::Garch(values.chunks(3).map(|c| GarchParams::new(c[0], c[1], c[2])).collect::<Result<_>>()?))
        }
        _ => Err(Error::domain("idiosyncratic value count does not match the model")),
    }
}

/// Rebuilds the static parameters of one archived draw, using `template`
/// for the model structure.
pub fn spec_from_row(template: &ModelSpec, store: &DrawStore, row: &[f64]) -> Result<ModelSpec> {
    let pick = |names: Vec<String>| -> Result<Vec<f64>> {
        names
            .iter()
            .map(|n| store.column_index(n).map(|j| row[j]).ok_or_else(|| Error::domain(format!("draws lack column `{n}`"))))
            .collect()
    };
    let mut spec = template.clone();
    spec.loadings = loadings_from_values(template, &pick(loading_names(template))?)?;
    spec.factor_garch = factor_garch_from_values(template, &pick(factor_garch_names(template))?)?;
    spec.idio = idio_from_values(template, &pick(idio_names(template))?)?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Identification;

    #[test]
    fn round_trip_through_a_row() {
        let spec = ModelSpec {
            n_series: 3,
            n_factors: 2,
            n_periods: 10,
            factor_garch: vec![
                GarchParams::new(0.1, 0.05, 0.9).unwrap().with_leverage(0.2),
                GarchParams::new(0.2, 0.1, 0.6).unwrap().with_leverage(-0.1),
            ],
            idio: IdioSpec::Garch(vec![GarchParams::new(0.01, 0.1, 0.8).unwrap(); 3]),
            loadings: DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.4, 1.0, -0.3, 0.7]),
            identification: Identification::TriangularUnitDiag,
            mean_mode: MeanMode::GarchInMean,
        };
        spec.validate().unwrap();
        let names = parameter_names(&spec);
        assert_eq!(names[..3], ["beta[2,1]", "beta[3,1]", "beta[3,2]"]);
        assert_eq!(names.len(), 3 + 8 + 9);
        let mut store = DrawStore::new(names);
        store.push(parameter_values(&spec)).unwrap();
        let back = spec_from_row(&spec, &store, &store.rows[0]).unwrap();
        assert_eq!(back, spec);
    }
}
