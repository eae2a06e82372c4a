//! Return panels: CSV loading, the R² series ordering and the QR check of
//! an ordering against invariant loading draws.

use std::collections::HashSet;
use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A T x N panel of returns with period labels and series names.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    pub dates: Vec<String>,
    pub series_names: Vec<String>,
    pub returns: DMatrix<f64>,
}

fn load_err(path: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Load { path: path.to_string(), line, message: message.into() }
}

impl ReturnPanel {
    pub fn new(dates: Vec<String>, series_names: Vec<String>, returns: DMatrix<f64>) -> Result<Self> {
        if returns.nrows() != dates.len() || returns.ncols() != series_names.len() {
            return Err(Error::domain(format!(
                "{} dates and {} names for a {}x{} panel",
                dates.len(),
                series_names.len(),
                returns.nrows(),
                returns.ncols()
            )));
        }
        if returns.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain("panel has non-finite returns"));
        }
        Ok(ReturnPanel { dates, series_names, returns })
    }

    pub fn n_periods(&self) -> usize {
        self.returns.nrows()
    }

    pub fn n_series(&self) -> usize {
        self.returns.ncols()
    }

    /// Rows from the period labelled `from` through the one labelled `to`.
    pub fn slice_dates(&self, from: &str, to: &str) -> Result<Self> {
        let find =
            |label: &str| self.dates.iter().position(|d| d == label).ok_or_else(|| Error::domain(format!("no period labelled {label}")));
        let (a, b) = (find(from)?, find(to)?);
        if a > b {
            return Err(Error::domain(format!("{from} comes after {to}")));
        }
        Ok(ReturnPanel {
            dates: self.dates[a..=b].to_vec(),
            series_names: self.series_names.clone(),
            returns: self.returns.rows(a, b - a + 1).into_owned(),
        })
    }

    /// Panel with columns in the given order.
    pub fn select(&self, order: &[usize]) -> Self {
        ReturnPanel {
            dates: self.dates.clone(),
            series_names: order.iter().map(|&i| self.series_names[i].clone()).collect(),
            returns: self.returns.select_columns(order),
        }
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(std::iter::once("date").chain(self.series_names.iter().map(String::as_str)))?;
        for (t, d) in self.dates.iter().enumerate() {
            w.write_record(std::iter::once(d.clone()).chain(self.returns.row(t).iter().map(|x| format!("{x:?}"))))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads a comma-separated panel whose first column holds period labels.
///
/// A first row whose value cells are not all numeric is a header; without
/// one, series are named `s1..sN`.
pub fn load_returns_csv(path: impl AsRef<Path>) -> Result<ReturnPanel> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_path(path)?;
    let mut names: Option<Vec<String>> = None;
    let mut dates = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(idx + 1);
        if rec.len() < 2 {
            return Err(load_err(&shown, line, "need a date column and at least one series"));
        }
        let cells: Vec<&str> = rec.iter().skip(1).collect();
        if idx == 0 && cells.iter().any(|c| c.parse::<f64>().is_err()) {
            let header: Vec<String> = cells.iter().map(|c| c.to_string()).collect();
            let mut seen = HashSet::new();
            if let Some(d) = header.iter().find(|h| !seen.insert(h.as_str())) {
                return Err(load_err(&shown, line, format!("duplicate column name {d:?}")));
            }
            width = Some(header.len());
            names = Some(header);
            continue;
        }
        let w = *width.get_or_insert(cells.len());
        if cells.len() != w {
            return Err(load_err(&shown, line, format!("expected {w} series, found {}", cells.len())));
        }
        for (j, c) in cells.iter().enumerate() {
            let x: f64 = c.parse().map_err(|_| load_err(&shown, line, format!("non-numeric cell {c:?} in column {}", j + 2)))?;
            if !x.is_finite() {
                return Err(load_err(&shown, line, format!("non-finite cell in column {}", j + 2)));
            }
            values.push(x);
        }
        dates.push(rec[0].to_string());
    }
    if dates.is_empty() {
        return Err(load_err(&shown, 1, "no data rows"));
    }
    let n = width.unwrap_or(0);
    let names = names.unwrap_or_else(|| (1..=n).map(|j| format!("s{j}")).collect());
    let returns = DMatrix::from_row_slice(dates.len(), n, &values);
    let panel = ReturnPanel::new(dates, names, returns)?;
    log::info!(
        "loaded {} periods x {} series ({} to {})",
        panel.n_periods(),
        panel.n_series(),
        panel.dates[0],
        panel.dates[panel.n_periods() - 1]
    );
    Ok(panel)
}

/// Which series of the best single-regressor regression is picked first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FirstPick {
    /// The dependent series.
    #[default]
    Dependent,
    /// The explanatory series.
    Explanatory,
}

/// R² values closer than this are ties.
const TIE_TOL: f64 = 1e-12;

fn centred(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut c = x.clone();
    for mut col in c.column_iter_mut() {
        let m = col.mean();
        col.add_scalar_mut(-m);
    }
    c
}

/// R² of regressing `y` on the columns of `x` plus an intercept, all centred.
fn r_squared(y: &DVector<f64>, x: &DMatrix<f64>) -> f64 {
    let sst = y.norm_squared();
    let svd = x.clone().svd(true, true);
    let coef = match svd.solve(y, 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE)) {
        Ok(c) => c,
        Err(_) => return 0.0,
    };
    let ssr = (y - x * coef).norm_squared();
    (1.0 - ssr / sst).clamp(0.0, 1.0)
}

/// Orders series by explanatory power.
///
/// The first pick comes from the pairwise regression with the highest R²;
/// each later pick is the unselected series best explained by all selected
/// ones. Ties go to the lowest column index. Constant series are skipped.
pub fn order_series_by_r2(panel: &ReturnPanel, depth: usize, first: FirstPick) -> Result<Vec<usize>> {
    let n = panel.n_series();
    if depth > n {
        return Err(Error::domain(format!("depth {depth} exceeds {n} series")));
    }
    let c = centred(&panel.returns);
    let norms: Vec<f64> = c.column_iter().map(|col| col.norm_squared()).collect();
    let usable: Vec<usize> = (0..n)
        .filter(|&i| {
            let scale = panel.returns.column(i).amax().max(1.0);
            let ok = norms[i] > (1e-14 * scale).powi(2) * panel.n_periods() as f64;
            if !ok {
                warn!("series {} ({}) is constant and is excluded from the ordering", i + 1, panel.series_names[i]);
            }
            ok
        })
        .collect();
    if depth > usable.len() {
        return Err(Error::domain(format!("depth {depth} exceeds the {} non-constant series", usable.len())));
    }
    let mut order = Vec::with_capacity(depth);
    if depth == 0 {
        return Ok(order);
    }
    if usable.len() == 1 {
        order.push(usable[0]);
        return Ok(order);
    }
    // Squared correlation is the single-regressor R² in either direction.
    let mut best: Option<(f64, usize, usize)> = None;
    for &i in &usable {
        for &j in &usable {
            if i == j {
                continue;
            }
            let dot = c.column(i).dot(&c.column(j));
            let r2 = dot * dot / (norms[i] * norms[j]);
            if best.is_none_or(|(b, _, _)| r2 > b + TIE_TOL) {
                best = Some((r2, i, j));
            }
        }
    }
    let (_, dep, expl) = best.expect("at least two usable series");
    order.push(match first {
        FirstPick::Dependent => dep,
        FirstPick::Explanatory => expl,
    });
    while order.len() < depth {
        let x = c.select_columns(&order);
        let mut pick: Option<(f64, usize)> = None;
        for &i in usable.iter().filter(|i| !order.contains(i)) {
            let r2 = r_squared(&c.column(i).into_owned(), &x);
            if pick.is_none_or(|(b, _)| r2 > b + TIE_TOL) {
                pick = Some((r2, i));
            }
        }
        order.push(pick.expect("depth checked against usable series").1);
    }
    Ok(order)
}

/// Decomposition `loadings = [E; Z] D Q` with `E` unit lower triangular,
/// `D` positive diagonal and `Q` orthogonal.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangularFactorisation {
    /// `[E; Z]`, the loadings under unit-diagonal identification.
    pub unit_diag_loadings: DMatrix<f64>,
    pub d: DVector<f64>,
    pub q: DMatrix<f64>,
}

pub fn triangular_factorisation(loadings: &DMatrix<f64>) -> Result<TriangularFactorisation> {
    let (n, k) = loadings.shape();
    if k == 0 || k > n {
        return Err(Error::domain(format!("need 1 <= K <= N, got {n}x{k}")));
    }
    // The top block is L Q, so its transpose is Q' L' with L' upper triangular.
    let qr = loadings.rows(0, k).transpose().qr();
    let mut q = qr.q().transpose();
    let mut l = qr.r().transpose();
    for j in 0..k {
        if l[(j, j)] < 0.0 {
            l.column_mut(j).neg_mut();
            q.row_mut(j).neg_mut();
        }
    }
    let d = l.diagonal();
    if d.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::numeric("loadings are rank deficient"));
    }
    let full = loadings * q.transpose();
    let mut unit = full.clone();
    for j in 0..k {
        unit.column_mut(j).unscale_mut(d[j]);
    }
    Ok(TriangularFactorisation { unit_diag_loadings: unit, d, q })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrawQr {
    /// Diagonal of `D`, empty when the draw is rank deficient.
    pub d: Vec<f64>,
    pub rank_deficient: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QrCheck {
    /// Smallest diagonal element of `D` over usable draws and factors.
    pub min_abs_diag: f64,
    pub per_draw: Vec<DrawQr>,
}

impl QrCheck {
    pub fn passes(&self, threshold: f64) -> bool {
        self.min_abs_diag > threshold
    }
}

/// Checks how far invariant loading draws are from violating the
/// unit-diagonal identification under the current series order.
pub fn qr_ordering_check(loading_draws: &[DMatrix<f64>]) -> QrCheck {
    let mut min = f64::INFINITY;
    let per_draw = loading_draws
        .iter()
        .map(|b| {
            let scale = b.amax();
            match triangular_factorisation(b) {
                Ok(f) if f.d.min() > 1e-13 * scale => {
                    min = min.min(f.d.min());
                    DrawQr { d: f.d.iter().copied().collect(), rank_deficient: false }
                }
                _ => {
                    warn!("rank-deficient loading draw excluded from the QR check");
                    DrawQr { d: Vec::new(), rank_deficient: true }
                }
            }
        })
        .collect();
    QrCheck { min_abs_diag: min, per_draw }
}
