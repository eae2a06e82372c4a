//! Ordering series by explanatory power and checking an ordering against
//! draws of unrestricted loadings.

use factor_garch::config::planted_loadings;
use factor_garch::panel::{order_series_by_r2, qr_ordering_check, triangular_factorisation, FirstPick, ReturnPanel};
use factor_garch::rng::rng_from_seed;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

fn main() -> factor_garch::Result<()> {
    let (t, n, k) = (300, 6, 2);
    let mut rng = rng_from_seed(12);
    let loadings = planted_loadings(n, k);
    let factors = DMatrix::from_fn(t, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let noise = DMatrix::from_fn(t, n, |_, _| 0.3 * rng.sample::<f64, _>(StandardNormal));
    let returns = &factors * loadings.transpose() + noise;
    let panel = ReturnPanel::new((1..=t).map(|s| s.to_string()).collect(), (1..=n).map(|i| format!("s{i}")).collect(), returns)?;

    for first in [FirstPick::Dependent, FirstPick::Explanatory] {
        let order = order_series_by_r2(&panel, 4, first)?;
        println!("{first:?}: {:?}", order.iter().map(|&i| &panel.series_names[i]).collect::<Vec<_>>());
    }

    let fac = triangular_factorisation(&loadings)?;
    println!("unit-diagonal loadings under the given order:\n{:.3}", fac.unit_diag_loadings);
    println!("scales d = {:.3}", fac.d.transpose());

    let draws: Vec<DMatrix<f64>> = (0..200).map(|_| loadings.map(|b| b + 0.05 * rng.sample::<f64, _>(StandardNormal))).collect();
    let check = qr_ordering_check(&draws);
    println!("smallest |d| over draws {:.3e}; passes at 1e-4: {}", check.min_abs_diag, check.passes(1e-4));
    Ok(())
}
