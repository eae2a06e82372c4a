//! Posterior checks of the Gibbs driver on models with closed-form or
//! quadrature posteriors.

use factor_garch::columns;
use factor_garch::diagnostics::obm_variance;
use factor_garch::driver::{Chain, RunConfig};
use factor_garch::kernels::log_sum_exp;
use factor_garch::model::{simulate, GarchParams, Identification, IdioSpec, MeanMode, ModelSpec};
use nalgebra::{DMatrix, DVector};

fn toy(b: f64, t: usize) -> ModelSpec {
    ModelSpec {
        n_series: 2,
        n_factors: 1,
        n_periods: t,
        factor_garch: vec![GarchParams::new(1.0, 0.0, 0.0).unwrap()],
        idio: IdioSpec::Constant(DVector::from_vec(vec![0.5, 0.8])),
        loadings: DMatrix::from_column_slice(2, 1, &[1.0, b]),
        identification: Identification::TriangularUnitDiag,
        mean_mode: MeanMode::ZeroMean,
    }
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (m, (obm_variance(xs).unwrap() / xs.len() as f64).sqrt())
}

#[test]
fn loading_posterior_matches_quadrature() {
    let t = 10;
    let data = simulate(&toy(0.7, t), 31).unwrap();
    let prior_var = 1.0;
    // Factors integrated out: y_t ~ N(0, bb' + D) independently.
    let log_post = |b: f64| {
        let (d1, d2) = (0.5, 0.8);
        let (c11, c12, c22) = (1.0 + d1, b, b * b + d2);
        let det = c11 * c22 - c12 * c12;
        let ll: f64 = (0..t)
            .map(|s| {
                let (y1, y2) = (data.observations[(s, 0)], data.observations[(s, 1)]);
                let q = (c22 * y1 * y1 - 2.0 * c12 * y1 * y2 + c11 * y2 * y2) / det;
                -0.5 * (det.ln() + q)
            })
            .sum();
        ll - 0.5 * b * b / prior_var
    };
    let grid: Vec<f64> = (-8000..=8000).map(|i| i as f64 * 1e-3).collect();
    let lp: Vec<f64> = grid.iter().map(|&b| log_post(b)).collect();
    let z = log_sum_exp(&lp);
    let exact: f64 = grid.iter().zip(&lp).map(|(b, l)| b * (l - z).exp()).sum();

    let config = RunConfig {
        n_iterations: 20_000,
        burn_in: 500,
        n_factors: 1,
        prior_var,
        fix_factor_garch: true,
        fix_idio: true,
        initial: Some(toy(0.7, t)),
        seed: 32,
        ..RunConfig::default()
    };
    let mut chain = Chain::new(&data, config, None).unwrap();
    chain.run().unwrap();
    let draws = chain.store().column(&columns::beta(1, 0)).unwrap();
    let (m, se) = mean_and_se(&draws);
    assert!((m - exact).abs() < 4.0 * se, "chain {m} vs quadrature {exact} (se {se})");
}

#[test]
fn idiosyncratic_variances_match_conjugate_posterior() {
    let t = 60;
    let truth = toy(0.7, t);
    let data = simulate(&truth, 41).unwrap();
    let factors = data.true_factors.clone().unwrap();
    let config = RunConfig {
        n_iterations: 8_000,
        burn_in: 0,
        n_factors: 1,
        fix_factors: true,
        fix_loadings: true,
        fix_factor_garch: true,
        ig_prior_mean: 0.4,
        ig_prior_df: 6.0,
        initial: Some(truth.clone()),
        seed: 42,
        ..RunConfig::default()
    };
    let prior = config.ig_prior().unwrap();
    let mut chain = Chain::new(&data, config, None).unwrap();
    chain.set_factor_values(factors.clone()).unwrap();
    chain.run().unwrap();
    let resid = &data.observations - &factors * truth.loadings.transpose();
    for i in 0..2 {
        let ss = resid.column(i).norm_squared();
        let (shape, scale) = prior.posterior(t, ss);
        let exact_mean = scale / (shape - 1.0);
        let draws = chain.store().column(&columns::idio_var(i)).unwrap();
        let (m, se) = mean_and_se(&draws);
        assert!((m - exact_mean).abs() < 4.0 * se, "series {i}: chain {m} vs exact {exact_mean} (se {se})");
    }
}
