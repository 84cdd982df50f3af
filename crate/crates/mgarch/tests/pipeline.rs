//! Cross-module integration: simulate → fit → diagnose → forecast/backtest.

mod common;

use mgarch::experiments::estimation_design;
use mgarch::{
    fit, fit_factor_garch, forecast_comparison, portmanteau_menu, rolling_backtest, simulate,
    BacktestEngine, BacktestOptions, BaselineModel, FitOptions, InnovationLaw,
};

#[test]
fn simulate_fit_diagnose_roundtrip() {
    let theta = estimation_design();
    let panel = simulate(&theta, 1000, 0, &InnovationLaw::MatrixNormal, 2024).unwrap();
    let options = FitOptions { multistarts: 1, ..FitOptions::default() };
    let res = fit(&panel, &options).unwrap();
    assert!(res.converged);
    let est = mgarch::pack_natural(&res.theta_hat);
    let truth = mgarch::pack_natural(&theta);
    let se = res.std_errors().unwrap();
    // every component within 4 asymptotic standard errors of the truth
    for j in 0..est.len() {
        assert!(
            (est[j] - truth[j]).abs() < 4.0 * se[j] + 1e-6,
            "component {j}: {} vs {} (se {})",
            est[j],
            truth[j],
            se[j]
        );
    }
    // a correctly specified model should not be rejected here
    let reports = portmanteau_menu(&panel, &res, &[2, 4, 6]).unwrap();
    for rep in &reports {
        assert!(rep.p_value > 0.01, "L={}: p={}", rep.lags, rep.p_value);
    }
}

#[test]
fn null_arch_data_gives_near_zero_arch_estimates() {
    // alpha = 0 and zero ARCH matrices in the DGP: estimates land within
    // two standard errors of zero (boundary-aware)
    let mut theta = estimation_design();
    theta.trace.alpha = 1e-4;
    theta.row.arch *= 0.0;
    theta.col.arch *= 0.0;
    let panel = simulate(&theta, 2000, 0, &InnovationLaw::MatrixNormal, 77).unwrap();
    let options = FitOptions { multistarts: 1, ..FitOptions::default() };
    let res = fit(&panel, &options).unwrap();
    let se = res.std_errors().unwrap();
    let est = mgarch::pack_natural(&res.theta_hat);
    let names = res.theta_hat.layout().param_names();
    for (j, name) in names.iter().enumerate() {
        if name == "alpha" || name.starts_with("A1") || name.starts_with("B1") {
            assert!(
                est[j].abs() <= (2.0 * se[j]).max(0.02),
                "{name} = {} (se {})",
                est[j],
                se[j]
            );
        }
    }
}

#[test]
fn factor_pipeline_end_to_end() {
    // 10x10 panel driven by a 3x3 factor GARCH plus idiosyncratic noise
    let (panel, r, _c) = common::simulate_factor_panel(10, 10, 600, 1.0, 5150);

    let (k1, k2) = mgarch::eigenvalue_ratio(&panel, 5).unwrap();
    assert_eq!((k1, k2), (3, 3));
    let options = FitOptions { multistarts: 1, ..FitOptions::default() };
    let ff = fit_factor_garch(&panel, k1, k2, &options).unwrap();
    assert!(ff.garch.converged);
    // loading spaces close to the truth
    let dist = common::subspace_distance(&ff.row_loadings, &r);
    assert!(dist < 0.25, "row subspace distance {dist}");
    // one-step-ahead covariance is usable for portfolio construction
    let sigma = ff.sigma_x(600).unwrap();
    let w = mgarch::mvp_unconstrained(&sigma).unwrap();
    assert!((w.sum() - 1.0).abs() < 1e-10);
}

#[test]
fn forecast_comparison_runs_with_all_baselines() {
    let theta = estimation_design();
    let panel = simulate(&theta, 500, 0, &InnovationLaw::MatrixNormal, 99).unwrap();
    let options = FitOptions { multistarts: 1, compute_sandwich: false, ..FitOptions::default() };
    let cmp = forecast_comparison(
        &panel,
        400,
        &[
            BaselineModel::UnivariateGarch,
            BaselineModel::DiagBekkColumn,
            BaselineModel::DiagBekkRow,
            BaselineModel::DiagBekkFull,
            BaselineModel::RiskMetrics { lambda: 0.94 },
            BaselineModel::SampleCovariance,
        ],
        &options,
    )
    .unwrap();
    assert_eq!(cmp.rows.len(), 7);
    assert_eq!(cmp.rows[0].model, "matrix-garch");
    for row in &cmp.rows {
        assert!(row.losses.mean.mse.is_finite());
        assert!(row.losses.mean.qlike.is_some(), "{} lost QLIKE", row.model);
        // entry sums are mn times the means
        assert!((row.losses.sum.mse - 9.0 * row.losses.mean.mse).abs() < 1e-9 * row.losses.sum.mse.abs());
    }
    // the correctly specified model should not be significantly beaten
    for row in &cmp.rows[1..] {
        if let Some(mgarch::DmTest::Statistic { stat, p_value }) = row.dm_mse {
            assert!(
                stat > -2.58 || p_value > 0.01,
                "{} significantly beats the true model: stat {stat}",
                row.model
            );
        }
    }
}

#[test]
fn matrix_garch_backtest_smoke() {
    let theta = estimation_design();
    let panel = simulate(&theta, 360, 0, &InnovationLaw::MatrixNormal, 11).unwrap();
    let opts = BacktestOptions {
        t_train: 300,
        t_test: 40,
        refit_every: 10,
        ..BacktestOptions::default()
    };
    let res = rolling_backtest(&panel, &BacktestEngine::MatrixGarch, &opts).unwrap();
    assert_eq!(res.returns.len(), 40);
    assert!(res.sd > 0.0);
    assert!(!res.carried.iter().any(|&c| c), "no window should fail here");
    assert_eq!(res.ir.signum(), res.av.signum());
    // long-only run produces nonnegative weights
    let res_c = rolling_backtest(
        &panel,
        &BacktestEngine::MatrixGarch,
        &BacktestOptions { constrained: true, ..opts },
    )
    .unwrap();
    for w in &res_c.weights {
        assert!(w.iter().all(|&x| x >= -1e-10));
        assert!((w.sum() - 1.0).abs() < 1e-10);
    }
}
