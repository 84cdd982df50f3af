//! Matrix GARCH modeling toolkit.
//!
//! Implements a conditional-heteroskedasticity model for matrix-variate time
//! series in which the observation satisfies `X_t = U_t^{1/2} Z_t V_t^{1/2}`
//! with BEKK-type recursions driving the (trace-normalized) conditional row
//! and column covariance factors and a scalar GARCH recursion driving the
//! overall scale `y_t = tr(U_t)`. On top of the filtering core the crate
//! provides:
//!
//! * simulation under matrix-normal and standardized matrix-t innovations;
//! * Gaussian quasi maximum likelihood estimation with sandwich-form
//!   asymptotic standard errors;
//! * a portmanteau test of model adequacy built on the autocorrelations of
//!   the residual quadratic form;
//! * a factor extension for large panels (projected loadings, varimax
//!   rotation, eigenvalue-ratio factor-number selection, high-dimensional
//!   covariance forecasts);
//! * volatility-forecast evaluation (MSE/MAE/QLIKE, Diebold–Mariano) against
//!   standard baselines, and minimum-variance portfolio backtesting;
//! * seeded Monte Carlo study runners for estimator recovery and test
//!   size/power experiments.

pub mod diagnose;
pub mod error;
pub mod estimate;
pub mod evaluate;
pub mod experiments;
pub mod factor;
pub mod filter;
pub mod linalg;
mod optim;
pub mod panel;
pub mod params;
pub mod portfolio;
pub mod simulate;

pub use diagnose::{
    omega_hat, portmanteau, portmanteau_menu, residual_autocorr, residuals, DiagnosticReport,
    OmegaEstimate,
};
pub use error::{Error, Result};
pub use estimate::{
    fit, gradient, moment_start, neg_loglik, sandwich, FitOptions, FitResult, Sandwich,
};
pub use evaluate::{
    baseline_forecasts, dm_test, entry_losses, forecast_comparison, loss_series,
    matrix_garch_forecasts, BaselineModel, DmTest, EntryLosses, ForecastComparison, LossSeries,
    LossValues,
};
pub use factor::{
    eigenvalue_ratio, estimate_loadings, extract_factors, fit_factor_garch, varimax, FactorFit,
    IdiosyncraticCov,
};
pub use filter::{filter, forecast_state, StatePath};
pub use panel::MatrixPanel;
pub use params::{
    pack_natural, unpack_natural, SecondOrderParams, SideParams, Structure, Theta, ThetaLayout,
    TraceParams, Transform,
};
pub use portfolio::{
    cumulative_returns, mvp_constrained, mvp_unconstrained, rolling_backtest, BacktestEngine,
    BacktestOptions, BacktestResult, ConstrainedMvp,
};
pub use simulate::{draw_innovation, simulate, InnovationLaw};
