//! Residuals and the portmanteau adequacy test.
//!
//! The test aggregates the first L autocorrelations of the centered
//! residual quadratic form `q_t - mn`, `q_t = vec(X_t)' Σ̂_t^{-1} vec(X_t)`,
//! into `Q(L) = T R̂' Ω̂^{-1} R̂`, which is asymptotically chi-square with L
//! degrees of freedom under a correctly specified model. The covariance
//! correction `Ω̂` accounts for the estimation effect through the sample
//! counterparts of
//! `Ω = ([1'η]² I_L − (N C0⁻¹ M'/2 + M C0⁻¹ N'/2 − M C0⁻¹ C1 C0⁻¹ M')) / κ²`
//! with `κ = E(Σ_{ij} Z²_{ij})² − m²n²` and `η_{ij} = E(Z⁴_{ij}) − 1`.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::estimate::{fd_step_natural, FitResult};
use crate::filter::{filter, LikelihoodEvaluator};
use crate::linalg::inv_sqrt_pd;
use crate::panel::MatrixPanel;
use crate::params::{pack_natural, unpack_natural, Theta};

/// Output of the portmanteau test at one lag count.
#[derive(Debug, Clone)]
pub struct DiagnosticReport {
    /// Number of aggregated lags L.
    pub lags: usize,
    /// Residual quadratic-form autocorrelations `R̂_1..R̂_L`.
    pub r_hat: DVector<f64>,
    /// Estimated asymptotic covariance of `sqrt(T) R̂`.
    pub omega_hat: DMatrix<f64>,
    /// Test statistic `Q = T R̂' Ω̂^{-1} R̂`.
    pub q_stat: f64,
    /// Upper-tail chi-square(L) p-value.
    pub p_value: f64,
    /// Sample counterpart of κ.
    pub kappa_hat: f64,
    /// Sample counterparts of η (column-major entry order).
    pub eta_hat: DVector<f64>,
}

/// Residual panel `Ẑ_t = Û_t^{-1/2} X_t V̂_t^{-1/2}` (symmetric roots).
pub fn residuals(panel: &MatrixPanel, theta: &Theta) -> Result<MatrixPanel> {
    let path = filter(panel, theta)?;
    let mut out = Vec::with_capacity(panel.len());
    for t in 0..panel.len() {
        let ui = inv_sqrt_pd(&path.u[t])?;
        let vi = inv_sqrt_pd(&path.v[t])?;
        out.push(&ui * panel.get(t) * &vi);
    }
    match panel.time_labels() {
        Some(labels) => MatrixPanel::with_labels(out, labels.to_vec()),
        None => MatrixPanel::new(out),
    }
}

fn quadratic_forms(panel: &MatrixPanel, theta: &Theta) -> Result<Vec<f64>> {
    if panel.dims() != theta.dims() {
        return Err(Error::DimensionMismatch("panel and parameters disagree".into()));
    }
    LikelihoodEvaluator::new(theta)
        .quadratic_forms(panel)
        .ok_or_else(|| Error::Numerical("conditional covariance numerically singular".into()))
}

fn autocorr_from_q(q: &[f64], mn: f64, max_lag: usize) -> Result<DVector<f64>> {
    let tlen = q.len();
    if max_lag == 0 {
        return Err(Error::InvalidParameter("lag count must be at least 1".into()));
    }
    if max_lag >= tlen {
        return Err(Error::InvalidParameter(format!(
            "lag count {max_lag} must be smaller than the sample size {tlen}"
        )));
    }
    let c: Vec<f64> = q.iter().map(|v| v - mn).collect();
    let denom: f64 = c.iter().map(|v| v * v).sum();
    if denom <= 1e-12 * tlen as f64 {
        return Err(Error::Numerical(
            "residual quadratic form is numerically constant; autocorrelations undefined".into(),
        ));
    }
    let mut r = DVector::zeros(max_lag);
    for l in 1..=max_lag {
        let mut num = 0.0;
        for t in l..tlen {
            num += c[t] * c[t - l];
        }
        r[l - 1] = num / denom;
    }
    Ok(r)
}

/// Sample autocorrelations of the centered residual quadratic form at lags
/// `1..=max_lag`.
pub fn residual_autocorr(panel: &MatrixPanel, theta: &Theta, max_lag: usize) -> Result<DVector<f64>> {
    let (m, n) = panel.dims();
    let q = quadratic_forms(panel, theta)?;
    autocorr_from_q(&q, (m * n) as f64, max_lag)
}

/// κ̂, η̂ and the L×L covariance estimate Ω̂.
#[derive(Debug, Clone)]
pub struct OmegaEstimate {
    /// Covariance of `sqrt(T) R̂` over lags `1..=L`.
    pub omega: DMatrix<f64>,
    /// Sample κ.
    pub kappa: f64,
    /// Sample η (column-major entry order).
    pub eta: DVector<f64>,
}

/// Assemble Ω from its ingredients (separable so the no-estimation-effect
/// limit can be checked directly).
pub(crate) fn assemble_omega(
    eta_sum: f64,
    kappa: f64,
    m_mat: &DMatrix<f64>,
    n_mat: &DMatrix<f64>,
    c0_inv: &DMatrix<f64>,
    c1: &DMatrix<f64>,
) -> DMatrix<f64> {
    let l = m_mat.nrows();
    let nc0m = n_mat * c0_inv * m_mat.transpose();
    let correction = (&nc0m + nc0m.transpose()) * 0.5 - m_mat * c0_inv * c1 * c0_inv * m_mat.transpose();
    let mut omega = DMatrix::identity(l, l) * (eta_sum * eta_sum);
    omega -= correction;
    omega /= kappa * kappa;
    crate::linalg::symmetrize(&mut omega);
    omega
}

fn trace_prod(a: &DMatrix<f64>, b: &[f64], d: usize) -> f64 {
    // tr(A B) for symmetric A (given as a matrix) and B column-major slice
    let mut s = 0.0;
    for j in 0..d {
        for i in 0..d {
            s += a[(j, i)] * b[j * d + i];
        }
    }
    s
}

fn quad_prod(w: &DMatrix<f64>, u: &[f64], v: &[f64], m: usize, n: usize, tmp: &mut DMatrix<f64>) -> f64 {
    // tr(W' U W V) for W m×n, U m×m, V n×n (slices column-major)
    // tmp = U W
    for j in 0..n {
        for i in 0..m {
            let mut s = 0.0;
            for k in 0..m {
                s += u[k * m + i] * w[(k, j)];
            }
            tmp[(i, j)] = s;
        }
    }
    // sum over (i,j,l): tmp[i,j] V[j,l] W[i,l]
    let mut acc = 0.0;
    for l in 0..n {
        for j in 0..n {
            let vjl = v[l * n + j];
            if vjl == 0.0 {
                continue;
            }
            for i in 0..m {
                acc += tmp[(i, j)] * vjl * w[(i, l)];
            }
        }
    }
    acc
}

/// Estimate Ω over lags `1..=max_lag` at a fitted model.
///
/// Requires the fit to carry its sandwich estimate (`C0`, `C1`); the
/// derivative `∂vec(Σ_t)/∂θ` is taken by central finite differences in
/// natural coordinates with the same step policy as the sandwich.
pub fn omega_hat(panel: &MatrixPanel, fit: &FitResult, max_lag: usize) -> Result<OmegaEstimate> {
    let theta = &fit.theta_hat;
    let (m, n) = panel.dims();
    let mn = m * n;
    let tlen = panel.len();
    if max_lag == 0 || max_lag >= tlen {
        return Err(Error::InvalidParameter(format!("invalid lag count {max_lag} for T={tlen}")));
    }
    let sandwich = fit
        .sandwich
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("fit does not carry a sandwich estimate".into()))?;

    // filtered state and per-time ingredients at the estimate
    let path = filter(panel, theta)?;
    let q = quadratic_forms(panel, theta)?;
    let c: Vec<f64> = q.iter().map(|v| v - mn as f64).collect();
    let kappa = q.iter().map(|v| v * v).sum::<f64>() / tlen as f64 - (mn * mn) as f64;

    let mut u_inv = Vec::with_capacity(tlen);
    let mut v_inv = Vec::with_capacity(tlen);
    let mut w_mats = Vec::with_capacity(tlen);
    let mut eta = DVector::zeros(mn);
    for t in 0..tlen {
        let cu = path.u[t]
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("U_t singular".into()))?;
        let cv = path.v[t]
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("V_t singular".into()))?;
        let ui = cu.inverse();
        let vi = cv.inverse();
        let w = &ui * panel.get(t) * &vi;
        u_inv.push(ui);
        v_inv.push(vi);
        w_mats.push(w);
        // residual fourth moments through the symmetric roots
        let z = inv_sqrt_pd(&path.u[t])? * panel.get(t) * inv_sqrt_pd(&path.v[t])?;
        for (k, e) in z.as_slice().iter().enumerate() {
            eta[k] += e.powi(4);
        }
    }
    eta /= tlen as f64;
    eta.add_scalar_mut(-1.0);

    // active-coordinate reduction consistent with the sandwich
    let active: Vec<usize> = fit
        .active
        .iter()
        .enumerate()
        .filter_map(|(i, a)| a.then_some(i))
        .collect();
    let pa = active.len();
    let layout = theta.layout();
    let v0 = pack_natural(theta);

    // per-(t, k) derivative contractions a_t = tr(Σ^{-1} ∂Σ/∂θ_k) and
    // b_t = x'Σ^{-1} (∂Σ/∂θ_k) Σ^{-1} x via the Kronecker structure
    let mut a_contr = DMatrix::<f64>::zeros(tlen, pa);
    let mut b_contr = DMatrix::<f64>::zeros(tlen, pa);
    let mut u_buf = vec![0.0; tlen * m * m];
    let mut v_buf = vec![0.0; tlen * n * n];
    let mut tmp = DMatrix::<f64>::zeros(m, n);
    let mut probe = v0.clone();
    for (k, &i) in active.iter().enumerate() {
        let h = fd_step_natural(v0[i]);
        for (sign, scale) in [(1.0, 0.5 / h), (-1.0, -0.5 / h)] {
            probe[i] = v0[i] + sign * h;
            let th = unpack_natural(&probe, &layout)?;
            if !LikelihoodEvaluator::new(&th).uv_path(panel, &mut u_buf, &mut v_buf) {
                probe[i] = v0[i];
                return Err(Error::Numerical(
                    "state degenerate at a finite-difference point of the covariance derivative".into(),
                ));
            }
            for t in 0..tlen {
                let us = &u_buf[t * m * m..(t + 1) * m * m];
                let vs = &v_buf[t * n * n..(t + 1) * n * n];
                let tr_u = trace_prod(&u_inv[t], us, m);
                let tr_v = trace_prod(&v_inv[t], vs, n);
                a_contr[(t, k)] += scale * tr_u * tr_v;
                b_contr[(t, k)] += scale * quad_prod(&w_mats[t], us, vs, m, n, &mut tmp);
            }
        }
        probe[i] = v0[i];
    }

    // sample counterparts of M_l and N_l
    let mut m_mat = DMatrix::<f64>::zeros(max_lag, pa);
    let mut n_mat = DMatrix::<f64>::zeros(max_lag, pa);
    for l in 1..=max_lag {
        for t in l..tlen {
            let cl = c[t - l];
            let ct = c[t];
            for k in 0..pa {
                m_mat[(l - 1, k)] += a_contr[(t, k)] * cl;
                n_mat[(l - 1, k)] += b_contr[(t, k)] * ct * cl;
            }
        }
    }
    m_mat /= tlen as f64;
    n_mat /= tlen as f64;

    // reduce C0, C1 to the active block and invert C0
    let mut c0a = DMatrix::zeros(pa, pa);
    let mut c1a = DMatrix::zeros(pa, pa);
    for (k, &i) in active.iter().enumerate() {
        for (l, &j) in active.iter().enumerate() {
            c0a[(k, l)] = sandwich.c0[(i, j)];
            c1a[(k, l)] = sandwich.c1[(i, j)];
        }
    }
    let eig = c0a.symmetric_eigen();
    let max_abs = eig.eigenvalues.iter().fold(0.0f64, |acc, &x| acc.max(x.abs()));
    let min_abs = eig.eigenvalues.iter().fold(f64::INFINITY, |acc, &x| acc.min(x.abs()));
    if !(min_abs > 0.0 && max_abs / min_abs < 1e12) {
        return Err(Error::IllConditioned { cond: max_abs / min_abs });
    }
    let inv_vals = DVector::from_iterator(pa, eig.eigenvalues.iter().map(|&x| 1.0 / x));
    let c0_inv = &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();

    let omega = assemble_omega(eta.sum(), kappa, &m_mat, &n_mat, &c0_inv, &c1a);
    Ok(OmegaEstimate { omega, kappa, eta })
}

fn chi2_upper_tail(q: f64, dof: usize) -> f64 {
    let chi = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
    (1.0 - chi.cdf(q)).clamp(0.0, 1.0)
}

fn report_for_lag(
    r_full: &DVector<f64>,
    omega_full: &OmegaEstimate,
    lag: usize,
    tlen: usize,
) -> Result<DiagnosticReport> {
    let r = DVector::from_iterator(lag, r_full.iter().take(lag).cloned());
    let omega = omega_full.omega.view((0, 0), (lag, lag)).clone_owned();
    let chol = omega.clone().cholesky().ok_or_else(|| {
        Error::NotPositiveDefinite(
            "Ω̂ is not positive definite; use a larger sample or fewer lags".into(),
        )
    })?;
    let sol = chol.solve(&r);
    let q_stat = (tlen as f64 * r.dot(&sol)).max(0.0);
    Ok(DiagnosticReport {
        lags: lag,
        r_hat: r,
        omega_hat: omega,
        q_stat,
        p_value: chi2_upper_tail(q_stat, lag),
        kappa_hat: omega_full.kappa,
        eta_hat: omega_full.eta.clone(),
    })
}

/// Portmanteau test at one lag count.
pub fn portmanteau(panel: &MatrixPanel, fit: &FitResult, lags: usize) -> Result<DiagnosticReport> {
    let reports = portmanteau_menu(panel, fit, &[lags])?;
    Ok(reports.into_iter().next().expect("one lag requested"))
}

/// Portmanteau tests at several lag counts, sharing the Ω̂ computation
/// (the covariance at a smaller lag menu is the leading block of the
/// larger one).
pub fn portmanteau_menu(panel: &MatrixPanel, fit: &FitResult, lags: &[usize]) -> Result<Vec<DiagnosticReport>> {
    if lags.is_empty() {
        return Err(Error::InvalidParameter("empty lag menu".into()));
    }
    let max_lag = *lags.iter().max().expect("nonempty");
    let (m, n) = panel.dims();
    let q = quadratic_forms(panel, &fit.theta_hat)?;
    let r_full = autocorr_from_q(&q, (m * n) as f64, max_lag)?;
    let omega_full = omega_hat(panel, fit, max_lag)?;
    lags.iter().map(|&l| report_for_lag(&r_full, &omega_full, l, panel.len())).collect()
}
