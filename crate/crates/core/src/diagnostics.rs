//! Draw archives, autocorrelation times and summary tables.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column-addressable archive of retained draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawStore {
    pub names: Vec<String>,
    /// One row per retained iteration.
    pub rows: Vec<Vec<f64>>,
}

impl DrawStore {
    pub fn new(names: Vec<String>) -> Self {
        DrawStore { names, rows: Vec::new() }
    }

    pub fn n_draws(&self) -> usize {
        self.rows.len()
    }

    pub fn n_columns(&self) -> usize {
        self.names.len()
    }

    pub fn push(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.names.len() {
            return Err(Error::domain(format!("draw has {} values for {} columns", row.len(), self.names.len())));
        }
        if let Some(i) = row.iter().position(|x| !x.is_finite()) {
            return Err(Error::numeric(format!("non-finite draw in column `{}`", self.names[i])));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        self.column_index(name).map(|j| self.column_at(j))
    }

    pub fn column_at(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    /// Columns whose name is `prefix` or starts with `prefix[`.
    pub fn group_columns(&self, prefix: &str) -> Vec<usize> {
        (0..self.names.len()).filter(|&j| group_of(&self.names[j]) == prefix).collect()
    }

    /// Rows for which `keep` holds.
    pub fn filter_rows(&self, keep: impl Fn(&[f64]) -> bool) -> DrawStore {
        DrawStore { names: self.names.clone(), rows: self.rows.iter().filter(|r| keep(r)).cloned().collect() }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.names)?;
        for r in &self.rows {
            w.write_record(r.iter().map(|x| format!("{x:?}")))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let names: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let mut store = DrawStore::new(names);
        for (i, rec) in r.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| Error::Load { path: display.clone(), line, message: e.to_string() })?;
            let row = rec.iter().map(|c| c.trim().parse::<f64>()).collect::<std::result::Result<Vec<_>, _>>().map_err(|e| Error::Load {
                path: display.clone(),
                line,
                message: e.to_string(),
            })?;
            store.push(row).map_err(|e| Error::Load { path: display.clone(), line, message: e.to_string() })?;
        }
        Ok(store)
    }
}

/// The group a column belongs to: its name up to the first `[`.
pub fn group_of(name: &str) -> &str {
    name.split('[').next().unwrap_or(name)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Sample autocorrelations at lags `0..=max_lag` (divide-by-R convention),
/// with lag 0 equal to one.
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let r = series.len();
    if r <= max_lag {
        return Err(Error::domain(format!("{r} draws cannot give lag {max_lag}")));
    }
    let m = mean(series);
    let centred: Vec<f64> = series.iter().map(|x| x - m).collect();
    let c0: f64 = centred.iter().map(|x| x * x).sum();
    if !(c0 > 0.0) {
        return Err(Error::domain("autocorrelation of a constant series"));
    }
    Ok((0..=max_lag)
        .map(|lag| if lag == 0 { 1.0 } else { centred[lag..].iter().zip(&centred).map(|(a, b)| a * b).sum::<f64>() / c0 })
        .collect())
}

/// Overlapping-batch-means asymptotic variance with batch length `⌊√R⌋`.
pub fn obm_variance(series: &[f64]) -> Result<f64> {
    let r = series.len();
    if r < 100 {
        return Err(Error::domain(format!("batch means need at least 100 draws, got {r}")));
    }
    let b = (r as f64).sqrt().floor() as usize;
    let m = mean(series);
    let mut window: f64 = series[..b].iter().map(|x| x - m).sum();
    let mut ss = (window / b as f64).powi(2);
    for j in 1..=(r - b) {
        window += series[j + b - 1] - series[j - 1];
        ss += (window / b as f64).powi(2);
    }
    let (rf, bf) = (r as f64, b as f64);
    Ok(rf * bf / ((rf - bf) * (rf - bf + 1.0)) * ss)
}

/// Integrated autocorrelation time: the batch-means asymptotic variance
/// divided by the sample variance.
pub fn iact(series: &[f64]) -> Result<f64> {
    if series.len() < 100 {
        return Err(Error::domain(format!("IACT needs at least 100 draws, got {}", series.len())));
    }
    let v = sample_variance(series);
    if !(v > 0.0) {
        return Err(Error::domain("IACT of a constant series"));
    }
    Ok(obm_variance(series)? / v)
}

/// IACT of every column, in column order.
pub fn column_iacts(store: &DrawStore) -> Vec<(String, Result<f64>)> {
    use rayon::prelude::*;
    (0..store.n_columns()).into_par_iter().map(|j| (store.names[j].clone(), iact(&store.column_at(j)))).collect()
}

/// Median and maximum IACT of one parameter group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupIact {
    pub group: String,
    pub label: String,
    pub n_columns: usize,
    pub median: f64,
    pub max: f64,
}

/// Display label of the groups reported in the efficiency tables.
pub fn group_label(group: &str) -> &str {
    match group {
        "bf" => "(βf)",
        "idio_var" => "Λ^E",
        "f_innov" => "α",
        "f_lag" => "θ",
        other => other,
    }
}

/// Groups reported in the efficiency tables, in column order.
pub const TABLE_GROUPS: [&str; 4] = ["bf", "idio_var", "f_innov", "f_lag"];

pub fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Median and maximum IACT per column group. Columns whose IACT cannot be
/// computed (constant draws) are skipped with a warning.
pub fn group_iacts(store: &DrawStore) -> Vec<GroupIact> {
    summarise_iacts(column_iacts(store))
}

/// Groups per-column IACTs by name prefix, in order of first appearance.
/// Columns from several stores may be pooled by chaining their results.
pub fn summarise_iacts(iacts: impl IntoIterator<Item = (String, Result<f64>)>) -> Vec<GroupIact> {
    let mut groups: BTreeMap<String, (usize, Vec<f64>)> = BTreeMap::new();
    let mut order = Vec::new();
    for (j, (name, value)) in iacts.into_iter().enumerate() {
        let g = group_of(&name).to_string();
        let entry = groups.entry(g.clone()).or_insert_with(|| {
            order.push(g.clone());
            (j, Vec::new())
        });
        match value {
            Ok(v) => entry.1.push(v),
            Err(e) => warn!("skipping column `{name}`: {e}"),
        }
    }
    order
        .into_iter()
        .filter_map(|g| {
            let (_, mut values) = groups.remove(&g)?;
            if values.is_empty() {
                return None;
            }
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Some(GroupIact { label: group_label(&g).to_string(), n_columns: values.len(), median: median(&mut values), max, group: g })
        })
        .collect()
}

/// Writes `group,label,n_columns,median_iact,max_iact`.
pub fn write_group_iacts(path: impl AsRef<Path>, rows: &[GroupIact]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["group", "label", "n_columns", "median_iact", "max_iact"])?;
    for r in rows {
        w.write_record([r.group.clone(), r.label.clone(), r.n_columns.to_string(), r.median.to_string(), r.max.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `draw,<column>` traces and `lag,<column>` autocorrelations for
/// the named columns, ready for plotting.
pub fn write_trace_and_acf(
    store: &DrawStore,
    columns: &[String],
    max_lag: usize,
    trace_path: impl AsRef<Path>,
    acf_path: impl AsRef<Path>,
) -> Result<()> {
    let idx: Vec<usize> =
        columns.iter().map(|c| store.column_index(c).ok_or_else(|| Error::domain(format!("no column `{c}`")))).collect::<Result<_>>()?;
    let mut header = vec!["draw".to_string()];
    header.extend(columns.iter().cloned());
    let mut w = csv::Writer::from_path(trace_path)?;
    w.write_record(&header)?;
    for (d, row) in store.rows.iter().enumerate() {
        let mut rec = vec![d.to_string()];
        rec.extend(idx.iter().map(|&j| row[j].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let lag_count = max_lag.min(store.n_draws().saturating_sub(1));
    let acfs: Vec<Vec<f64>> = idx.iter().map(|&j| autocorrelation(&store.column_at(j), lag_count)).collect::<Result<_>>()?;
    header[0] = "lag".into();
    let mut w = csv::Writer::from_path(acf_path)?;
    w.write_record(&header)?;
    for lag in 0..=lag_count {
        let mut rec = vec![lag.to_string()];
        rec.extend(acfs.iter().map(|a| a[lag].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// One row of the signal-to-noise table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrRow {
    pub series: usize,
    pub sample_var: f64,
    pub idio_var: f64,
    pub snr: f64,
    /// Draws left out because they imply no unconditional variance.
    pub excluded_draws: usize,
}

pub fn snr(sample_var: f64, idio_var: f64) -> f64 {
    (sample_var - idio_var) / idio_var
}

/// Signal-to-noise ratio per series from the observations (T x N) and the
/// archived idiosyncratic parameters. The idiosyncratic variance is the
/// posterior mean of the unconditional variance `e_intercept / (1 - e_innov - e_lag)`,
/// or of `idio_var` for constant variances.
pub fn snr_table(observations: &nalgebra::DMatrix<f64>, store: &DrawStore) -> Result<Vec<SnrRow>> {
    let n = observations.ncols();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let col: Vec<f64> = observations.column(i).iter().copied().collect();
        let sample_var = sample_variance(&col);
        let tag = i + 1;
        let (values, excluded) = if let Some(v) = store.column(&format!("idio_var[{tag}]")) {
            (v, 0)
        } else {
            let get =
                |name: &str| store.column(&format!("{name}[{tag}]")).ok_or_else(|| Error::domain(format!("draws lack `{name}[{tag}]`")));
            let (a, b, c) = (get("e_intercept")?, get("e_innov")?, get("e_lag")?);
            let mut values = Vec::with_capacity(a.len());
            let mut excluded = 0;
            for r in 0..a.len() {
                let gap = 1.0 - b[r] - c[r];
                if gap > 0.0 {
                    values.push(a[r] / gap);
                } else {
                    excluded += 1;
                }
            }
            if excluded > 0 {
                warn!("series {tag}: {excluded} nonstationary draws excluded from the idiosyncratic variance");
            }
            (values, excluded)
        };
        if values.is_empty() {
            return Err(Error::domain(format!("no usable idiosyncratic draws for series {tag}")));
        }
        let idio_var = mean(&values);
        out.push(SnrRow { series: tag, sample_var, idio_var, snr: snr(sample_var, idio_var), excluded_draws: excluded });
    }
    Ok(out)
}

/// Writes `series,name,sample_var,idio_var,snr`.
pub fn write_snr_table(path: impl AsRef<Path>, rows: &[SnrRow], names: Option<&[String]>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["series", "name", "sample_var", "idio_var", "snr"])?;
    for r in rows {
        let name = names.and_then(|n| n.get(r.series - 1)).cloned().unwrap_or_else(|| format!("series{}", r.series));
        w.write_record([r.series.to_string(), name, format!("{:?}", r.sample_var), format!("{:?}", r.idio_var), format!("{:?}", r.snr)])?;
    }
    w.flush()?;
    Ok(())
}
