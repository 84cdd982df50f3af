//! Minimum-variance portfolio construction and rolling backtests.
//!
//! Weights come from a one-step-ahead covariance forecast `Σ̂` of the
//! vectorized panel: the unconstrained minimum-variance portfolio is the
//! closed form `Σ̂^{-1}1 / (1'Σ̂^{-1}1)`; the long-only version solves
//! `min w'Σ̂w` on the probability simplex by projected gradient with a
//! checkable KKT certificate. Returns are treated as percentages
//! throughout (cumulative compounding is `Π(1 + r/100) - 1`).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimate::FitOptions;
use crate::factor::{eigenvalue_ratio, extract_factors, fit_factor_garch, IdiosyncraticCov};
use crate::filter::forecast_state;
use crate::panel::MatrixPanel;

/// Closed-form unconstrained minimum-variance weights `Σ^{-1}1/(1'Σ^{-1}1)`.
pub fn mvp_unconstrained(sigma: &DMatrix<f64>) -> Result<DVector<f64>> {
    let d = sigma.nrows();
    if sigma.ncols() != d || d == 0 {
        return Err(Error::DimensionMismatch("covariance must be square".into()));
    }
    let ones = DVector::from_element(d, 1.0);
    let sol = crate::linalg::solve_spd(sigma, &ones)
        .map_err(|_| Error::NotPositiveDefinite("covariance singular in the MVP solve".into()))?;
    let denom = sol.sum();
    if !denom.is_finite() || denom.abs() < 1e-300 {
        return Err(Error::Numerical("degenerate budget normalization".into()));
    }
    Ok(sol / denom)
}

/// Long-only minimum-variance solution with its optimality certificate.
#[derive(Debug, Clone)]
pub struct ConstrainedMvp {
    /// Weights on the probability simplex.
    pub weights: DVector<f64>,
    /// KKT residual: max deviation of the gradient from the active-set
    /// multiplier, plus any complementarity violation (computed on the
    /// trace-normalized problem).
    pub kkt_residual: f64,
    /// Projected-gradient iterations used.
    pub iterations: usize,
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(v: &DVector<f64>) -> DVector<f64> {
    let d = v.len();
    let mut sorted: Vec<f64> = v.iter().cloned().collect();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (k, &val) in sorted.iter().enumerate() {
        cumsum += val;
        let candidate = (cumsum - 1.0) / (k + 1) as f64;
        if k + 1 == d || sorted[k + 1] <= candidate {
            if val > candidate {
                tau = candidate;
                if k + 1 == d || sorted[k + 1] <= candidate {
                    // check the standard stopping rule
                    let next_ok = k + 1 == d || sorted[k + 1] - candidate <= 0.0;
                    if next_ok {
                        tau = candidate;
                        break;
                    }
                }
            }
        }
    }
    DVector::from_iterator(d, v.iter().map(|x| (x - tau).max(0.0)))
}

fn kkt_residual(grad: &DVector<f64>, w: &DVector<f64>) -> f64 {
    let active: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 1e-12).collect();
    if active.is_empty() {
        return f64::INFINITY;
    }
    let mu = active.iter().map(|&i| grad[i]).sum::<f64>() / active.len() as f64;
    let mut res: f64 = 0.0;
    for i in 0..w.len() {
        if w[i] > 1e-12 {
            res = res.max((grad[i] - mu).abs());
        } else {
            res = res.max((mu - grad[i]).max(0.0));
        }
    }
    res
}

/// Long-only minimum-variance portfolio by projected gradient descent with
/// Barzilai–Borwein steps and an Armijo safeguard, stopping on the KKT
/// residual.
pub fn mvp_constrained(sigma: &DMatrix<f64>) -> Result<ConstrainedMvp> {
    let d = sigma.nrows();
    if sigma.ncols() != d || d == 0 {
        return Err(Error::DimensionMismatch("covariance must be square".into()));
    }
    // normalize the scale so tolerances are meaningful across inputs
    let tau = (sigma.trace() / d as f64).max(1e-300);
    let a = sigma / tau;
    let obj = |w: &DVector<f64>| (w.transpose() * &a * w)[(0, 0)];
    let mut w = DVector::from_element(d, 1.0 / d as f64);
    let mut grad = &a * &w * 2.0;
    let mut fw = obj(&w);
    let mut step = 0.25 * d as f64 / a.trace().max(1e-300);
    let tol = 1e-8;
    let max_iter = 200_000;
    let mut prev_w: Option<(DVector<f64>, DVector<f64>)> = None;
    for iter in 0..max_iter {
        let res = kkt_residual(&grad, &w);
        if res < tol {
            return Ok(ConstrainedMvp { weights: w, kkt_residual: res, iterations: iter });
        }
        // Barzilai–Borwein step from the previous move
        if let Some((wp, gp)) = &prev_w {
            let s = &w - wp;
            let y = &grad - gp;
            let sy = s.dot(&y);
            if sy > 1e-300 {
                step = (s.dot(&s) / sy).clamp(1e-12, 1e8);
            }
        }
        // Armijo backtracking on the projected step
        let mut alpha = step;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = project_simplex(&(&w - &grad * alpha));
            let fc = obj(&cand);
            let dir = &cand - &w;
            let decrease = grad.dot(&dir);
            if fc <= fw + 1e-4 * decrease || dir.amax() < 1e-16 {
                prev_w = Some((w.clone(), grad.clone()));
                w = cand;
                fw = fc;
                grad = &a * &w * 2.0;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // step collapsed: accept the current point if the certificate is
            // close enough, otherwise report failure below
            break;
        }
    }
    let res = kkt_residual(&grad, &w);
    if res < 1e-6 {
        return Ok(ConstrainedMvp { weights: w, kkt_residual: res, iterations: max_iter });
    }
    Err(Error::OptimizationFailed(format!(
        "projected gradient stalled with KKT residual {res:.3e}"
    )))
}

/// Cumulative compounded returns `Π(1 + r_t/100) - 1` for percentage
/// returns.
pub fn cumulative_returns(returns: &[f64]) -> Vec<f64> {
    let mut acc = 1.0;
    returns
        .iter()
        .map(|r| {
            acc *= 1.0 + r / 100.0;
            acc - 1.0
        })
        .collect()
}

/// Covariance engine driving a rolling backtest.
#[derive(Debug, Clone)]
pub enum BacktestEngine {
    /// Matrix factor GARCH with the given factor counts (`None` selects
    /// them by the eigenvalue-ratio method on the first training window).
    MatrixFactorGarch {
        /// Row factor count.
        k1: Option<usize>,
        /// Column factor count.
        k2: Option<usize>,
    },
    /// Plain matrix GARCH (small panels).
    MatrixGarch,
    /// Exponentially weighted moving average of outer products.
    RiskMetrics {
        /// Smoothing parameter.
        lambda: f64,
    },
    /// Constant training-window sample covariance.
    SampleCovariance,
    /// Fixed 1/(mn) weights (no covariance model).
    EqualWeights,
}

/// Rolling-backtest configuration.
#[derive(Debug, Clone)]
pub struct BacktestOptions {
    /// Training-window length.
    pub t_train: usize,
    /// Number of test time points (the last `t_test` observations).
    pub t_test: usize,
    /// Long-only weights.
    pub constrained: bool,
    /// Annualization factor (252 daily, 52 weekly).
    pub periods_per_year: f64,
    /// Refit the engine every this many test steps (1 = every step);
    /// between refits the fitted parameters are reused and only the
    /// filtered state is updated with the newest window.
    pub refit_every: usize,
    /// Fit options for GARCH-based engines (the sandwich is always skipped
    /// inside backtests).
    pub fit: FitOptions,
    /// Candidate bound for eigenvalue-ratio factor selection.
    pub k_max: usize,
}

impl Default for BacktestOptions {
    fn default() -> Self {
        BacktestOptions {
            t_train: 252,
            t_test: 100,
            constrained: false,
            periods_per_year: 252.0,
            refit_every: 1,
            fit: FitOptions { multistarts: 1, ..FitOptions::default() },
            k_max: 5,
        }
    }
}

/// Backtest output: per-time weights and returns plus annualized summary
/// statistics.
#[derive(Debug, Clone)]
pub struct BacktestResult {
    /// Weight vectors, one per test time.
    pub weights: Vec<DVector<f64>>,
    /// Realized portfolio returns `w'vec(X_t)` (percent).
    pub returns: Vec<f64>,
    /// Annualized average return.
    pub av: f64,
    /// Annualized standard deviation of returns.
    pub sd: f64,
    /// Information ratio AV/SD.
    pub ir: f64,
    /// Whether the long-only constraint was active.
    pub constrained: bool,
    /// Flags test times whose engine fit failed and reused prior weights.
    pub carried: Vec<bool>,
    /// Cumulative compounded returns for plotting.
    pub cumulative: Vec<f64>,
}

enum EngineState {
    Factor {
        row_loadings: DMatrix<f64>,
        col_loadings: DMatrix<f64>,
        theta: crate::params::Theta,
        sigma_e: IdiosyncraticCov,
    },
    Garch {
        theta: crate::params::Theta,
    },
    Stateless,
}

fn window_sample_cov(window: &MatrixPanel) -> DMatrix<f64> {
    let (m, n) = window.dims();
    let mn = m * n;
    let mut cov = DMatrix::zeros(mn, mn);
    for t in 0..window.len() {
        let x = window.vec_at(t);
        cov.gemm(1.0, &x, &x.transpose(), 1.0);
    }
    cov / window.len() as f64
}

fn refit_engine(
    engine: &BacktestEngine,
    window: &MatrixPanel,
    opts: &BacktestOptions,
) -> Result<EngineState> {
    let fit_opts = FitOptions { compute_sandwich: false, ..opts.fit.clone() };
    match engine {
        BacktestEngine::MatrixFactorGarch { k1, k2 } => {
            let (m, n) = window.dims();
            let (k1, k2) = match (k1, k2) {
                (Some(a), Some(b)) => (*a, *b),
                _ => {
                    let k_max = opts.k_max.min(m.min(n) - 1).max(1);
                    let (sel1, sel2) = eigenvalue_ratio(window, k_max)?;
                    (k1.unwrap_or(sel1), k2.unwrap_or(sel2))
                }
            };
            let ff = fit_factor_garch(window, k1, k2, &fit_opts)?;
            Ok(EngineState::Factor {
                row_loadings: ff.row_loadings,
                col_loadings: ff.col_loadings,
                theta: ff.garch.theta_hat,
                sigma_e: ff.sigma_e,
            })
        }
        BacktestEngine::MatrixGarch => {
            let res = crate::estimate::fit(window, &fit_opts)?;
            Ok(EngineState::Garch { theta: res.theta_hat })
        }
        _ => Ok(EngineState::Stateless),
    }
}

fn forecast_cov(
    engine: &BacktestEngine,
    state: &EngineState,
    window: &MatrixPanel,
) -> Result<DMatrix<f64>> {
    match (engine, state) {
        (BacktestEngine::MatrixFactorGarch { .. }, EngineState::Factor { row_loadings, col_loadings, theta, sigma_e, .. }) => {
            let factors = extract_factors(window, row_loadings, col_loadings)?;
            let (u_f, v_f, _) = forecast_state(&factors, theta)?;
            let mut sigma = (col_loadings * v_f * col_loadings.transpose())
                .kronecker(&(row_loadings * u_f * row_loadings.transpose()));
            match sigma_e {
                IdiosyncraticCov::Dense(s) => sigma += s,
                IdiosyncraticCov::Diagonal(d) => {
                    for i in 0..d.len() {
                        sigma[(i, i)] += d[i];
                    }
                }
            }
            crate::linalg::symmetrize(&mut sigma);
            Ok(sigma)
        }
        (BacktestEngine::MatrixGarch, EngineState::Garch { theta }) => {
            let (u, v, _) = forecast_state(window, theta)?;
            Ok(v.kronecker(&u))
        }
        (BacktestEngine::RiskMetrics { lambda }, _) => {
            let mut sigma = window_sample_cov(window);
            let mn = sigma.nrows();
            for t in 0..window.len() {
                let x = window.vec_at(t);
                let mut next = DMatrix::zeros(mn, mn);
                next.gemm(1.0 - lambda, &x, &x.transpose(), 0.0);
                next += &sigma * *lambda;
                sigma = next;
            }
            Ok(sigma)
        }
        (BacktestEngine::SampleCovariance, _) => Ok(window_sample_cov(window)),
        (BacktestEngine::EqualWeights, _) => unreachable!("equal weights bypass the covariance"),
        _ => Err(Error::Numerical("engine state mismatch".into())),
    }
}

/// Rolling minimum-variance backtest over the last `t_test` observations,
/// refitting on the latest `t_train` observations per the refit cadence.
pub fn rolling_backtest(
    panel: &MatrixPanel,
    engine: &BacktestEngine,
    opts: &BacktestOptions,
) -> Result<BacktestResult> {
    let (m, n) = panel.dims();
    let mn = m * n;
    let tlen = panel.len();
    if opts.t_train < 2 || opts.t_test < 2 {
        return Err(Error::InvalidData("need t_train >= 2 and t_test >= 2".into()));
    }
    if opts.t_train + opts.t_test > tlen {
        return Err(Error::InvalidData(format!(
            "t_train + t_test = {} exceeds T = {tlen}",
            opts.t_train + opts.t_test
        )));
    }
    if opts.refit_every == 0 {
        return Err(Error::InvalidParameter("refit_every must be at least 1".into()));
    }
    let first_test = tlen - opts.t_test;
    let equal = DVector::from_element(mn, 1.0 / mn as f64);
    let mut state: Option<EngineState> = None;
    let mut weights = Vec::with_capacity(opts.t_test);
    let mut carried = Vec::with_capacity(opts.t_test);
    let mut returns = Vec::with_capacity(opts.t_test);
    for (step, t0) in (first_test..tlen).enumerate() {
        let window = panel.slice(t0 - opts.t_train, t0)?;
        let w = if matches!(engine, BacktestEngine::EqualWeights) {
            carried.push(false);
            equal.clone()
        } else {
            if step % opts.refit_every == 0 {
                match refit_engine(engine, &window, opts) {
                    Ok(s) => state = Some(s),
                    Err(e) => log::warn!("engine refit failed at test step {step} ({e}); carrying previous state"),
                }
            }
            let sigma = state
                .as_ref()
                .map(|s| forecast_cov(engine, s, &window))
                .transpose()?;
            match sigma {
                Some(sigma) => {
                    let solved = if opts.constrained {
                        mvp_constrained(&sigma).map(|c| c.weights)
                    } else {
                        mvp_unconstrained(&sigma)
                    };
                    match solved {
                        Ok(w) => {
                            carried.push(false);
                            w
                        }
                        Err(e) => {
                            log::warn!("weight solve failed at test step {step} ({e}); carrying previous weights");
                            carried.push(true);
                            weights.last().cloned().unwrap_or_else(|| equal.clone())
                        }
                    }
                }
                None => {
                    carried.push(true);
                    weights.last().cloned().unwrap_or_else(|| equal.clone())
                }
            }
        };
        returns.push(w.dot(&panel.vec_at(t0)));
        weights.push(w);
    }
    let h = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / h;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (h - 1.0);
    let av = mean * opts.periods_per_year;
    let sd = var.sqrt() * opts.periods_per_year.sqrt();
    let ir = if sd > 0.0 { av / sd } else { f64::NAN };
    let cumulative = cumulative_returns(&returns);
    Ok(BacktestResult {
        weights,
        returns,
        av,
        sd,
        ir,
        constrained: opts.constrained,
        carried,
        cumulative,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_spd(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        &a * a.transpose() + DMatrix::identity(d, d) * 0.1
    }

    #[test]
    fn unconstrained_closed_forms() {
        let id = DMatrix::<f64>::identity(100, 100);
        let w = mvp_unconstrained(&id).unwrap();
        for i in 0..100 {
            assert!((w[i] - 0.01).abs() < 1e-14);
        }
        let diag = DMatrix::from_diagonal(&nalgebra::dvector![1.0, 2.0]);
        let w2 = mvp_unconstrained(&diag).unwrap();
        assert!((w2[0] - 2.0 / 3.0).abs() < 1e-14);
        assert!((w2[1] - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn unconstrained_beats_random_feasible_portfolios() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sigma = random_spd(8, &mut rng);
        let w = mvp_unconstrained(&sigma).unwrap();
        assert!((w.sum() - 1.0).abs() < 1e-10);
        let var_w = (w.transpose() * &sigma * &w)[(0, 0)];
        for _ in 0..1000 {
            let mut z = DVector::from_fn(8, |_, _| rng.sample::<f64, _>(StandardNormal));
            while z.sum().abs() < 0.1 {
                z = DVector::from_fn(8, |_, _| rng.sample::<f64, _>(StandardNormal));
            }
            let cand = &z / z.sum();
            let var_c = (cand.transpose() * &sigma * &cand)[(0, 0)];
            assert!(var_c >= var_w - 1e-12);
        }
    }

    #[test]
    fn unconstrained_scale_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let sigma = random_spd(6, &mut rng);
        let w1 = mvp_unconstrained(&sigma).unwrap();
        let w2 = mvp_unconstrained(&(&sigma * 37.5)).unwrap();
        assert!((w1 - w2).amax() < 1e-12);
    }

    #[test]
    fn constrained_interior_matches_unconstrained() {
        let id = DMatrix::<f64>::identity(5, 5);
        let sol = mvp_constrained(&id).unwrap();
        for i in 0..5 {
            assert!((sol.weights[i] - 0.2).abs() < 1e-8);
        }
        assert!(sol.kkt_residual < 1e-6);
    }

    #[test]
    fn constrained_two_asset_corner() {
        // high positive covariance pushes the unconstrained weight negative;
        // the long-only solution sits on the lower-variance asset
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.9, 0.9, 0.85]);
        let unc = mvp_unconstrained(&sigma).unwrap();
        assert!(unc[0] < 0.0);
        let sol = mvp_constrained(&sigma).unwrap();
        assert!(sol.weights[0] < 1e-9);
        assert!((sol.weights[1] - 1.0).abs() < 1e-9);
        // objective ordering: constrained never better than unconstrained
        let f = |w: &DVector<f64>| (w.transpose() * &sigma * w)[(0, 0)];
        assert!(f(&sol.weights) >= f(&unc) - 1e-12);
    }

    #[test]
    fn constrained_kkt_certificates_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for k in 0..20 {
            let d = 2 + (k % 12);
            let sigma = random_spd(d, &mut rng);
            let sol = mvp_constrained(&sigma).unwrap();
            assert!(sol.kkt_residual < 1e-6, "instance {k}: residual {}", sol.kkt_residual);
            assert!((sol.weights.sum() - 1.0).abs() < 1e-10);
            assert!(sol.weights.iter().all(|&w| w >= -1e-10));
        }
    }

    #[test]
    fn cumulative_compounding_hand_check() {
        let cum = cumulative_returns(&[1.0, 2.0, -0.5]);
        assert!((cum[0] - 0.01).abs() < 1e-15);
        assert!((cum[1] - (1.01 * 1.02 - 1.0)).abs() < 1e-15);
        assert!((cum[2] - (1.01 * 1.02 * 0.995 - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn equal_weights_backtest_is_constant_and_constraint_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let data: Vec<DMatrix<f64>> = (0..80)
            .map(|_| DMatrix::from_fn(2, 2, |_, _| rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let panel = MatrixPanel::new(data).unwrap();
        let opts = BacktestOptions { t_train: 40, t_test: 20, periods_per_year: 252.0, ..Default::default() };
        let unc = rolling_backtest(&panel, &BacktestEngine::EqualWeights, &opts).unwrap();
        let con = rolling_backtest(
            &panel,
            &BacktestEngine::EqualWeights,
            &BacktestOptions { constrained: true, ..opts },
        )
        .unwrap();
        for t in 0..20 {
            for i in 0..4 {
                assert!((unc.weights[t][i] - 0.25).abs() < 1e-14);
            }
            assert_eq!(unc.returns[t], con.returns[t]);
        }
        assert_eq!(unc.av, con.av);
        // IR sign equals AV sign
        assert_eq!(unc.ir.signum(), unc.av.signum());
        // budget holds at every time
        for w in &unc.weights {
            assert!((w.sum() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn sample_cov_backtest_runs_and_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let data: Vec<DMatrix<f64>> = (0..120)
            .map(|_| DMatrix::from_fn(2, 3, |i, j| (1.0 + 0.3 * (i + j) as f64) * rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let panel = MatrixPanel::new(data).unwrap();
        let opts = BacktestOptions { t_train: 60, t_test: 30, ..Default::default() };
        for constrained in [false, true] {
            let res = rolling_backtest(
                &panel,
                &BacktestEngine::SampleCovariance,
                &BacktestOptions { constrained, ..opts.clone() },
            )
            .unwrap();
            assert_eq!(res.returns.len(), 30);
            for w in &res.weights {
                assert!((w.sum() - 1.0).abs() < 1e-10);
                if constrained {
                    assert!(w.iter().all(|&x| x >= -1e-10));
                }
            }
            assert!(!res.carried.iter().any(|&c| c));
        }
    }
}
