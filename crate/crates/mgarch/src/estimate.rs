//! Gaussian quasi maximum likelihood estimation with sandwich-form
//! asymptotic covariance.
//!
//! The objective is the feasible average quasi log-likelihood
//! `L_T(θ) = (1/2T) Σ_t { log|Σ_t(θ)| + vec(X_t)' Σ_t(θ)^{-1} vec(X_t) }`
//! computed with zero initial values and the Kronecker shortcut (the mn×mn
//! covariance is never assembled). Optimization runs in unconstrained
//! coordinates through [`Transform`]; inference runs in natural coordinates,
//! where the sandwich `C0^{-1} C1 C0^{-1} / T` estimates the asymptotic
//! covariance of the estimates that get reported.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::filter::{LikelihoodEvaluator, PENALTY};
use crate::optim::{minimize, BfgsOptions};
use crate::panel::MatrixPanel;
use crate::params::{
    pack_natural, unpack_natural, SecondOrderParams, SideParams, Structure, Theta, ThetaLayout,
    TraceParams, Transform,
};

/// Options controlling [`fit`].
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Shape restriction applied to both sides' ARCH/GARCH matrices.
    pub structure: Structure,
    /// Fit the order-(2,2) recursions instead of order (1,1).
    pub second_order: bool,
    /// Number of optimizer starts (first is moment-matched, the rest are
    /// seeded perturbations of it).
    pub multistarts: usize,
    /// Iteration cap per start.
    pub max_iter: usize,
    /// Convergence tolerance: the fit is flagged converged when the
    /// infinity norm of the gradient and the final objective decrease both
    /// fall below it.
    pub tol: f64,
    /// Seed for the multistart perturbations.
    pub seed: u64,
    /// Enforce the stationarity box through the transform.
    pub enforce_stationarity: bool,
    /// Stationarity bound.
    pub rho_bar: f64,
    /// Compute the sandwich covariance after optimization.
    pub compute_sandwich: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            structure: Structure::Diagonal,
            second_order: false,
            multistarts: 5,
            max_iter: 500,
            tol: 1e-5,
            seed: 1,
            enforce_stationarity: true,
            rho_bar: 0.999,
            compute_sandwich: true,
        }
    }
}

/// Sandwich covariance estimate in natural coordinates.
#[derive(Debug, Clone)]
pub struct Sandwich {
    /// Hessian estimate `C0 = (1/T) Σ ∂²l_t/∂θ∂θ'` (zero rows/columns on
    /// structurally inactive coordinates).
    pub c0: DMatrix<f64>,
    /// Outer-product estimate `C1 = (1/T) Σ (∂l_t/∂θ)(∂l_t/∂θ)'`.
    pub c1: DMatrix<f64>,
    /// Asymptotic covariance `C0^{-1} C1 C0^{-1} / T`.
    pub avar: DMatrix<f64>,
    /// `sqrt(diag(avar))`; zero on inactive coordinates.
    pub std_errors: DVector<f64>,
}

/// Result of a quasi maximum likelihood fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    /// Estimated parameters (signs canonicalized so each ARCH/GARCH matrix
    /// has nonnegative leading entry).
    pub theta_hat: Theta,
    /// Objective value at the optimum (per-observation scale).
    pub neg_loglik: f64,
    /// Sandwich covariance, when requested.
    pub sandwich: Option<Sandwich>,
    /// Gradient and decrease both below tolerance at the accepted optimum.
    pub converged: bool,
    /// Iterations used by the winning start.
    pub iterations: usize,
    /// Number of starts actually optimized.
    pub multistart_best_of: usize,
    /// Estimate within 0.5% of a stationarity boundary, or with a vanishing
    /// intercept scale.
    pub boundary: bool,
    /// Structurally active coordinates (false on dead coordinates, e.g. the
    /// whole row side when m = 1).
    pub active: Vec<bool>,
    /// Infinity norm of the unconstrained gradient at the optimum.
    pub grad_inf_norm: f64,
}

impl FitResult {
    /// Convenience accessor: standard errors, when the sandwich was computed.
    pub fn std_errors(&self) -> Option<&DVector<f64>> {
        self.sandwich.as_ref().map(|s| &s.std_errors)
    }
}

/// Feasible average negative quasi log-likelihood.
///
/// Numerically singular states yield a large finite penalty rather than an
/// error, so optimizers can probe infeasible regions safely.
pub fn neg_loglik(theta: &Theta, panel: &MatrixPanel) -> Result<f64> {
    if panel.dims() != theta.dims() {
        return Err(Error::DimensionMismatch(format!(
            "panel is {:?}, parameters are {:?}",
            panel.dims(),
            theta.dims()
        )));
    }
    Ok(LikelihoodEvaluator::new(theta).average(panel))
}

/// Central finite-difference step for unconstrained coordinates.
fn fd_step_unconstrained(v: f64) -> f64 {
    (1e-7 * v.abs()).max(1e-5)
}

/// Central finite-difference step for natural coordinates (sandwich and
/// covariance derivatives).
pub(crate) fn fd_step_natural(v: f64) -> f64 {
    1e-4 * v.abs().max(1.0)
}

/// Gradient of [`neg_loglik`] in the unconstrained parameterization, by
/// central finite differences with step `max(1e-5, 1e-7 |v_i|)`.
///
/// Components belonging to structurally inert parameters come out exactly
/// zero because the objective does not move.
pub fn gradient(theta: &Theta, panel: &MatrixPanel) -> Result<DVector<f64>> {
    let tf = Transform::new(theta.layout());
    let v = tf.pack(theta)?;
    gradient_at(&v, &tf, panel)
}

fn gradient_at(v: &DVector<f64>, tf: &Transform, panel: &MatrixPanel) -> Result<DVector<f64>> {
    let p = v.len();
    let mut g = DVector::zeros(p);
    let mut probe = v.clone();
    for i in 0..p {
        let h = fd_step_unconstrained(v[i]);
        probe[i] = v[i] + h;
        let f_plus = objective(&probe, tf, panel);
        probe[i] = v[i] - h;
        let f_minus = objective(&probe, tf, panel);
        probe[i] = v[i];
        if f_plus >= PENALTY || f_minus >= PENALTY {
            return Err(Error::Numerical(format!(
                "objective not finite near the requested point (coordinate {i})"
            )));
        }
        g[i] = (f_plus - f_minus) / (2.0 * h);
    }
    Ok(g)
}

fn objective(v: &DVector<f64>, tf: &Transform, panel: &MatrixPanel) -> f64 {
    match tf.unpack(v) {
        Ok(theta) => LikelihoodEvaluator::new(&theta).average(panel),
        Err(_) => PENALTY,
    }
}

/// Structurally inactive packed coordinates: when a side has dimension 1 its
/// driver cancels out of `U_t = y_t S_{1,t}/tr(S_{1,t})`, so that side's
/// ARCH/GARCH coefficients cannot move the likelihood.
fn active_mask(layout: &ThetaLayout) -> Vec<bool> {
    let mut mask = vec![true; layout.param_count()];
    let n_lags = if layout.second_order { 4 } else { 2 };
    let mut pos = layout.trace_len();
    for (d, structure) in [(layout.m, layout.row_structure), (layout.n, layout.col_structure)] {
        let a0_len = d * (d + 1) / 2 - 1;
        let coeff_len = match structure {
            Structure::Full => d * d,
            Structure::Diagonal => d,
        };
        if d == 1 {
            for k in pos..pos + a0_len + n_lags * coeff_len {
                mask[k] = false;
            }
        }
        pos += a0_len + n_lags * coeff_len;
    }
    mask
}

/// Moment-matched starting point: variance-targeted trace parameters and
/// intercept roots from Cholesky factors of the sample row/column second
/// moments, rescaled to unit leading entry.
pub fn moment_start(panel: &MatrixPanel, layout: &ThetaLayout) -> Theta {
    let (m, n) = (layout.m, layout.n);
    let tlen = panel.len() as f64;
    let mut mean_sq = 0.0;
    let mut row_mom = DMatrix::zeros(m, m);
    let mut col_mom = DMatrix::zeros(n, n);
    for x in panel.data() {
        mean_sq += x.norm_squared();
        row_mom.gemm(1.0, x, &x.transpose(), 1.0);
        col_mom.gemm(1.0, &x.transpose(), x, 1.0);
    }
    mean_sq /= tlen;
    row_mom /= tlen;
    col_mom /= tlen;

    let intercept_root = |mom: &DMatrix<f64>| {
        let d = mom.nrows();
        let ridge = 1e-8 * mom.trace().max(1e-8) / d as f64;
        let reg = mom + DMatrix::identity(d, d) * ridge;
        let mut l = reg
            .cholesky()
            .map(|c| c.l())
            .unwrap_or_else(|| DMatrix::identity(d, d));
        let scale = l[(0, 0)];
        l /= scale;
        l[(0, 0)] = 1.0;
        l
    };

    let side = |mom: &DMatrix<f64>, structure: Structure, second: bool| {
        let d = mom.nrows();
        let (a1, a2) = if second { (0.3, 0.5) } else { (0.3, 0.6) };
        SideParams {
            intercept_root: intercept_root(mom),
            arch: DMatrix::identity(d, d) * a1,
            garch: DMatrix::identity(d, d) * a2,
            structure,
        }
    };

    let (alpha, beta) = if layout.second_order { (0.1, 0.7) } else { (0.1, 0.8) };
    let omega = ((1.0 - alpha - beta
        - if layout.second_order { 0.1 } else { 0.0 })
        * mean_sq)
        .max(1e-8);
    let second = layout.second_order.then(|| {
        let mut s = SecondOrderParams::zeros(m, n);
        s.trace_arch = 0.05;
        s.trace_garch = 0.05;
        s.row_arch = DMatrix::identity(m, m) * 0.15;
        s.row_garch = DMatrix::identity(m, m) * 0.15;
        s.col_arch = DMatrix::identity(n, n) * 0.15;
        s.col_garch = DMatrix::identity(n, n) * 0.15;
        s
    });
    Theta {
        trace: TraceParams { omega, alpha, beta },
        row: side(&row_mom, layout.row_structure, layout.second_order),
        col: side(&col_mom, layout.col_structure, layout.second_order),
        second,
    }
}

struct ActiveMap {
    base: DVector<f64>,
    idx: Vec<usize>,
}

impl ActiveMap {
    fn new(base: DVector<f64>, mask: &[bool]) -> Self {
        let idx = mask
            .iter()
            .enumerate()
            .filter_map(|(i, a)| a.then_some(i))
            .collect();
        ActiveMap { base, idx }
    }

    fn reduce(&self, full: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.idx.len(), self.idx.iter().map(|&i| full[i]))
    }

    fn expand(&self, reduced: &DVector<f64>) -> DVector<f64> {
        let mut full = self.base.clone();
        for (k, &i) in self.idx.iter().enumerate() {
            full[i] = reduced[k];
        }
        full
    }
}

/// Quasi maximum likelihood fit over `multistarts` optimizer starts.
pub fn fit(panel: &MatrixPanel, options: &FitOptions) -> Result<FitResult> {
    let (m, n) = panel.dims();
    let layout = ThetaLayout {
        m,
        n,
        row_structure: options.structure,
        col_structure: options.structure,
        second_order: options.second_order,
    };
    let p = layout.param_count();
    if panel.len() <= p {
        return Err(Error::InvalidData(format!(
            "need T > p for identification at the sample level (T = {}, p = {p})",
            panel.len()
        )));
    }
    if options.multistarts == 0 {
        return Err(Error::InvalidParameter("multistarts must be at least 1".into()));
    }
    let tf = Transform {
        layout,
        rho_bar: options.rho_bar,
        enforce_stationarity: options.enforce_stationarity,
    };
    let start = moment_start(panel, &layout);
    let v0 = tf.pack(&start)?;
    let mask = active_mask(&layout);
    let map = ActiveMap::new(v0.clone(), &mask);

    let obj_full = |v: &DVector<f64>| objective(v, &tf, panel);
    let obj = |vr: &DVector<f64>| obj_full(&map.expand(vr));
    let grad = |vr: &DVector<f64>| {
        let full = map.expand(vr);
        let p_act = vr.len();
        let mut g = DVector::zeros(p_act);
        let mut probe = full.clone();
        for k in 0..p_act {
            let i = map.idx[k];
            let h = fd_step_unconstrained(full[i]);
            probe[i] = full[i] + h;
            let f_plus = obj_full(&probe);
            probe[i] = full[i] - h;
            let f_minus = obj_full(&probe);
            probe[i] = full[i];
            g[k] = (f_plus - f_minus) / (2.0 * h);
        }
        g
    };

    let bfgs_opts = BfgsOptions { max_iter: options.max_iter, gtol: options.tol };
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut best: Option<crate::optim::BfgsOutcome> = None;
    let mut starts_run = 0;
    for s in 0..options.multistarts {
        let mut vr = map.reduce(&v0);
        if s > 0 {
            for k in 0..vr.len() {
                vr[k] += 0.3 * rng.sample::<f64, _>(StandardNormal);
            }
        }
        if obj(&vr) >= PENALTY {
            continue;
        }
        let out = minimize(&obj, &grad, vr, &bfgs_opts);
        starts_run += 1;
        if best.as_ref().map_or(true, |b| out.f < b.f) {
            best = Some(out);
        }
    }
    let best = best.ok_or_else(|| {
        Error::OptimizationFailed("every start was infeasible for the likelihood".into())
    })?;
    if best.f >= PENALTY {
        return Err(Error::OptimizationFailed(
            "optimizer could not leave the penalty region".into(),
        ));
    }

    let v_full = map.expand(&best.x);
    let mut theta_hat = tf.unpack(&v_full)?;
    theta_hat.canonicalize_signs();

    let boundary = near_boundary(&theta_hat, options);
    let sandwich = if options.compute_sandwich {
        Some(sandwich_at_masked(&theta_hat, panel, &mask)?)
    } else {
        None
    };

    Ok(FitResult {
        theta_hat,
        neg_loglik: best.f,
        sandwich,
        converged: best.reached_gtol && best.last_decrease.abs() < options.tol,
        iterations: best.iterations,
        multistart_best_of: starts_run,
        boundary,
        active: mask,
        grad_inf_norm: best.grad_inf,
    })
}

fn near_boundary(theta: &Theta, options: &FitOptions) -> bool {
    if theta.trace.omega < 1e-10 {
        return true;
    }
    if !options.enforce_stationarity {
        return false;
    }
    let edge = 0.995 * options.rho_bar;
    let mut persist = theta.trace.alpha + theta.trace.beta;
    if let Some(s) = &theta.second {
        persist += s.trace_arch + s.trace_garch;
    }
    if persist > edge {
        return true;
    }
    if options.structure == Structure::Diagonal {
        let (m, n) = theta.dims();
        for i in 0..m {
            let mut r = theta.row.arch[(i, i)].powi(2) + theta.row.garch[(i, i)].powi(2);
            if let Some(s) = &theta.second {
                r += s.row_arch[(i, i)].powi(2) + s.row_garch[(i, i)].powi(2);
            }
            if r > edge {
                return true;
            }
        }
        for i in 0..n {
            let mut r = theta.col.arch[(i, i)].powi(2) + theta.col.garch[(i, i)].powi(2);
            if let Some(s) = &theta.second {
                r += s.col_arch[(i, i)].powi(2) + s.col_garch[(i, i)].powi(2);
            }
            if r > edge {
                return true;
            }
        }
    }
    false
}

/// Sandwich covariance at a parameter point, in natural coordinates.
///
/// `C0` is the finite-difference Hessian of the per-observation average
/// objective; `C1` averages outer products of per-observation score
/// contributions obtained by central differences of the likelihood path.
pub fn sandwich(theta: &Theta, panel: &MatrixPanel) -> Result<Sandwich> {
    let mask = active_mask(&theta.layout());
    sandwich_at_masked(theta, panel, &mask)
}

fn lik_path_natural(v: &DVector<f64>, layout: &ThetaLayout, panel: &MatrixPanel) -> Result<Vec<f64>> {
    let theta = unpack_natural(v, layout)?;
    LikelihoodEvaluator::new(&theta)
        .per_observation(panel)
        .ok_or_else(|| Error::Numerical("likelihood unevaluable at a finite-difference point".into()))
}

fn sandwich_at_masked(theta: &Theta, panel: &MatrixPanel, mask: &[bool]) -> Result<Sandwich> {
    let layout = theta.layout();
    let p = layout.param_count();
    let tlen = panel.len();
    let v = pack_natural(theta);
    let active: Vec<usize> = mask
        .iter()
        .enumerate()
        .filter_map(|(i, a)| a.then_some(i))
        .collect();
    let pa = active.len();

    // per-observation scores by central differences (active coordinates)
    let mut scores = DMatrix::zeros(pa, tlen);
    let mut probe = v.clone();
    for (k, &i) in active.iter().enumerate() {
        let h = fd_step_natural(v[i]);
        probe[i] = v[i] + h;
        let lp = lik_path_natural(&probe, &layout, panel)?;
        probe[i] = v[i] - h;
        let lm = lik_path_natural(&probe, &layout, panel)?;
        probe[i] = v[i];
        for t in 0..tlen {
            scores[(k, t)] = (lp[t] - lm[t]) / (2.0 * h);
        }
    }
    let mut c1a = DMatrix::zeros(pa, pa);
    c1a.gemm(1.0 / tlen as f64, &scores, &scores.transpose(), 0.0);

    // Hessian of the average objective by central second differences
    let mean_obj = |v: &DVector<f64>| -> Result<f64> {
        let theta = unpack_natural(v, &layout)?;
        let f = LikelihoodEvaluator::new(&theta).average(panel);
        if f >= PENALTY {
            return Err(Error::Numerical(
                "objective unevaluable at a finite-difference point".into(),
            ));
        }
        Ok(f)
    };
    let f0 = mean_obj(&v)?;
    let mut c0a = DMatrix::zeros(pa, pa);
    for (k, &i) in active.iter().enumerate() {
        let hi = fd_step_natural(v[i]);
        probe[i] = v[i] + hi;
        let fp = mean_obj(&probe)?;
        probe[i] = v[i] - hi;
        let fm = mean_obj(&probe)?;
        probe[i] = v[i];
        c0a[(k, k)] = (fp + fm - 2.0 * f0) / (hi * hi);
        for (l, &j) in active.iter().enumerate().skip(k + 1) {
            let hj = fd_step_natural(v[j]);
            probe[i] = v[i] + hi;
            probe[j] = v[j] + hj;
            let fpp = mean_obj(&probe)?;
            probe[j] = v[j] - hj;
            let fpm = mean_obj(&probe)?;
            probe[i] = v[i] - hi;
            let fmm = mean_obj(&probe)?;
            probe[j] = v[j] + hj;
            let fmp = mean_obj(&probe)?;
            probe[i] = v[i];
            probe[j] = v[j];
            let hij = (fpp - fpm - fmp + fmm) / (4.0 * hi * hj);
            c0a[(k, l)] = hij;
            c0a[(l, k)] = hij;
        }
    }

    // invert C0 with a condition check
    let eig = c0a.clone().symmetric_eigen();
    let max_abs = eig.eigenvalues.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    let min_abs = eig.eigenvalues.iter().fold(f64::INFINITY, |m, &x| m.min(x.abs()));
    let cond = if min_abs > 0.0 { max_abs / min_abs } else { f64::INFINITY };
    if !(cond < 1e12) {
        return Err(Error::IllConditioned { cond });
    }
    let inv_vals = DVector::from_iterator(pa, eig.eigenvalues.iter().map(|&x| 1.0 / x));
    let c0inv = &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
    let mut avar_a = &c0inv * &c1a * &c0inv / tlen as f64;
    crate::linalg::symmetrize(&mut avar_a);

    // embed into full-size matrices with zeros on dead coordinates
    let mut c0 = DMatrix::zeros(p, p);
    let mut c1 = DMatrix::zeros(p, p);
    let mut avar = DMatrix::zeros(p, p);
    for (k, &i) in active.iter().enumerate() {
        for (l, &j) in active.iter().enumerate() {
            c0[(i, j)] = c0a[(k, l)];
            c1[(i, j)] = c1a[(k, l)];
            avar[(i, j)] = avar_a[(k, l)];
        }
    }
    let std_errors = DVector::from_iterator(p, (0..p).map(|i| avar[(i, i)].max(0.0).sqrt()));
    Ok(Sandwich { c0, c1, avar, std_errors })
}
