//! Filtering recursions mapping an observed panel and a parameter bundle to
//! the conditional-covariance path.
//!
//! The recursion for the row-side driver `S_{1,t}`, the column-side driver
//! `S_{2,t}` and the trace process `y_t` starts from zero initial values
//! (`X_0 = 0`, `S_{1,0} = 0`, `S_{2,0} = 0`, `y_0 = 0`), so the first state
//! is the intercept: `S_{1,1} = A0 A0'`, `y_1 = omega`. The conditional
//! moments are the trace-normalized versions
//! `U_t = y_t S_{1,t}/tr(S_{1,t})` and `V_t = S_{2,t}/tr(S_{2,t})`, giving
//! `tr(V_t) = 1` and `tr(U_t) = y_t` identically.
//!
//! [`Recursion`] is the allocation-free stepper shared by [`filter`], the
//! simulator and the likelihood; it works on column-major slices.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::small;
use crate::panel::MatrixPanel;
use crate::params::{Structure, Theta};

/// Filtered state sequence: drivers, trace process and normalized
/// conditional covariance factors, one entry per time point.
#[derive(Debug, Clone)]
pub struct StatePath {
    /// Row-side drivers `S_{1,t}` (m×m, positive definite).
    pub s1: Vec<DMatrix<f64>>,
    /// Column-side drivers `S_{2,t}` (n×n, positive definite).
    pub s2: Vec<DMatrix<f64>>,
    /// Trace process `y_t > 0`.
    pub y: Vec<f64>,
    /// Conditional row factors `U_t` with `tr(U_t) = y_t`.
    pub u: Vec<DMatrix<f64>>,
    /// Conditional column factors `V_t` with `tr(V_t) = 1`.
    pub v: Vec<DMatrix<f64>>,
}

impl StatePath {
    /// Number of filtered time points.
    pub fn len(&self) -> usize {
        self.y.len()
    }

    /// True when no states are stored.
    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn check(&self, t: usize) -> Result<()> {
        if t >= self.len() {
            return Err(Error::IndexOutOfBounds(format!("state {t} of a path with T={}", self.len())));
        }
        Ok(())
    }

    /// Conditional covariance of `vec(X_t)`: the Kronecker product
    /// `V_t ⊗ U_t` (mn×mn), with trace `y_t`.
    pub fn sigma(&self, t: usize) -> Result<DMatrix<f64>> {
        self.check(t)?;
        Ok(self.v[t].kronecker(&self.u[t]))
    }

    /// Conditional row covariance `E(X_t X_t' | F_{t-1}) = tr(V_t) U_t`.
    pub fn row_cov(&self, t: usize) -> Result<DMatrix<f64>> {
        self.check(t)?;
        Ok(&self.u[t] * self.v[t].trace())
    }

    /// Conditional column covariance `E(X_t' X_t | F_{t-1}) = tr(U_t) V_t`.
    pub fn col_cov(&self, t: usize) -> Result<DMatrix<f64>> {
        self.check(t)?;
        Ok(&self.v[t] * self.u[t].trace())
    }
}

/// One side's coefficient matrix in the layout the stepper consumes.
#[derive(Debug, Clone)]
pub(crate) enum Coeff {
    Full(Vec<f64>),
    Diag(Vec<f64>),
}

impl Coeff {
    fn from_matrix(mat: &DMatrix<f64>, structure: Structure) -> Self {
        match structure {
            Structure::Full => Coeff::Full(mat.as_slice().to_vec()),
            Structure::Diagonal => Coeff::Diag((0..mat.nrows()).map(|i| mat[(i, i)]).collect()),
        }
    }
}

/// Allocation-free stepper for the three recursions. `step` advances the
/// state from time t-1 to time t given `X_{t-1}` (and `X_{t-2}` at order 2).
#[derive(Debug, Clone)]
pub(crate) struct Recursion {
    pub m: usize,
    pub n: usize,
    icpt_row: Vec<f64>,
    icpt_col: Vec<f64>,
    omega: f64,
    alpha: [f64; 2],
    beta: [f64; 2],
    row_arch: Coeff,
    row_garch: Coeff,
    col_arch: Coeff,
    col_garch: Coeff,
    row_arch2: Option<Coeff>,
    row_garch2: Option<Coeff>,
    col_arch2: Option<Coeff>,
    col_garch2: Option<Coeff>,
    // state
    pub s1: Vec<f64>,
    pub s2: Vec<f64>,
    pub y: f64,
    s1_lag: Vec<f64>,
    s2_lag: Vec<f64>,
    y_lag: f64,
    // scratch
    s1_next: Vec<f64>,
    s2_next: Vec<f64>,
    tmp_mn: Vec<f64>,
    tmp_nm: Vec<f64>,
    tmp_dd: Vec<f64>,
}

impl Recursion {
    pub fn new(theta: &Theta) -> Self {
        let (m, n) = theta.dims();
        let mut icpt_row = vec![0.0; m * m];
        small::syrk_acc(&mut icpt_row, theta.row.intercept_root.as_slice(), m, m);
        let mut icpt_col = vec![0.0; n * n];
        small::syrk_acc(&mut icpt_col, theta.col.intercept_root.as_slice(), n, n);
        let (alpha2, beta2) = theta
            .second
            .as_ref()
            .map(|s| (s.trace_arch, s.trace_garch))
            .unwrap_or((0.0, 0.0));
        Recursion {
            m,
            n,
            icpt_row,
            icpt_col,
            omega: theta.trace.omega,
            alpha: [theta.trace.alpha, alpha2],
            beta: [theta.trace.beta, beta2],
            row_arch: Coeff::from_matrix(&theta.row.arch, theta.row.structure),
            row_garch: Coeff::from_matrix(&theta.row.garch, theta.row.structure),
            col_arch: Coeff::from_matrix(&theta.col.arch, theta.col.structure),
            col_garch: Coeff::from_matrix(&theta.col.garch, theta.col.structure),
            row_arch2: theta.second.as_ref().map(|s| Coeff::from_matrix(&s.row_arch, theta.row.structure)),
            row_garch2: theta.second.as_ref().map(|s| Coeff::from_matrix(&s.row_garch, theta.row.structure)),
            col_arch2: theta.second.as_ref().map(|s| Coeff::from_matrix(&s.col_arch, theta.col.structure)),
            col_garch2: theta.second.as_ref().map(|s| Coeff::from_matrix(&s.col_garch, theta.col.structure)),
            s1: vec![0.0; m * m],
            s2: vec![0.0; n * n],
            y: 0.0,
            s1_lag: vec![0.0; m * m],
            s2_lag: vec![0.0; n * n],
            y_lag: 0.0,
            s1_next: vec![0.0; m * m],
            s2_next: vec![0.0; n * n],
            tmp_mn: vec![0.0; m * n],
            tmp_nm: vec![0.0; n * m],
            tmp_dd: vec![0.0; m.max(n) * m.max(n)],
        }
    }

    /// Reset to the zero initial values.
    pub fn reset(&mut self) {
        self.s1.fill(0.0);
        self.s2.fill(0.0);
        self.s1_lag.fill(0.0);
        self.s2_lag.fill(0.0);
        self.y = 0.0;
        self.y_lag = 0.0;
    }

    /// `x * x'`-type ARCH contribution on the row side: adds
    /// `arch · X X' · arch'` to `dst` for X given column-major m×n.
    fn add_row_arch(coeff: &Coeff, x: &[f64], dst: &mut [f64], tmp_mn: &mut [f64], m: usize, n: usize) {
        match coeff {
            Coeff::Full(a) => {
                small::mul_nn(tmp_mn, a, x, m, m, n);
                small::syrk_acc(dst, tmp_mn, m, n);
            }
            Coeff::Diag(a) => {
                for j in 0..n {
                    for i in 0..m {
                        tmp_mn[j * m + i] = a[i] * x[j * m + i];
                    }
                }
                small::syrk_acc(dst, tmp_mn, m, n);
            }
        }
    }

    /// Column-side ARCH contribution: adds `arch · X' X · arch'` to `dst`.
    fn add_col_arch(coeff: &Coeff, x: &[f64], dst: &mut [f64], tmp_nm: &mut [f64], m: usize, n: usize) {
        match coeff {
            Coeff::Full(b) => {
                small::mul_nt(tmp_nm, b, x, n, n, m, false);
                small::syrk_acc(dst, tmp_nm, n, m);
            }
            Coeff::Diag(b) => {
                for j in 0..m {
                    for i in 0..n {
                        tmp_nm[j * n + i] = b[i] * x[i * m + j];
                    }
                }
                small::syrk_acc(dst, tmp_nm, n, m);
            }
        }
    }

    /// GARCH contribution: adds `garch · S · garch'` to `dst` (d×d).
    fn add_garch(coeff: &Coeff, s: &[f64], dst: &mut [f64], tmp_dd: &mut [f64], d: usize) {
        match coeff {
            Coeff::Full(g) => {
                let tmp = &mut tmp_dd[..d * d];
                small::mul_nn(tmp, g, s, d, d, d);
                small::mul_nt(dst, tmp, g, d, d, d, true);
            }
            Coeff::Diag(g) => {
                for j in 0..d {
                    let gj = g[j];
                    for i in 0..d {
                        dst[j * d + i] += g[i] * gj * s[j * d + i];
                    }
                }
            }
        }
    }

    /// Advance the state one step. `x_prev`/`x_prev2` are the lag-1/lag-2
    /// observations in column-major layout (`None` encodes the zero initial
    /// values before the sample starts).
    pub fn step(&mut self, x_prev: Option<&[f64]>, x_prev2: Option<&[f64]>) {
        let (m, n) = (self.m, self.n);
        self.s1_next.copy_from_slice(&self.icpt_row);
        self.s2_next.copy_from_slice(&self.icpt_col);
        let mut xn2 = 0.0;
        if let Some(x) = x_prev {
            xn2 = small::frob_sq(x);
            Self::add_row_arch(&self.row_arch, x, &mut self.s1_next, &mut self.tmp_mn, m, n);
            Self::add_col_arch(&self.col_arch, x, &mut self.s2_next, &mut self.tmp_nm, m, n);
        }
        Self::add_garch(&self.row_garch, &self.s1, &mut self.s1_next, &mut self.tmp_dd, m);
        Self::add_garch(&self.col_garch, &self.s2, &mut self.s2_next, &mut self.tmp_dd, n);
        let mut xn2_2 = 0.0;
        if let Some(a2) = &self.row_arch2 {
            if let Some(x2) = x_prev2 {
                xn2_2 = small::frob_sq(x2);
                Self::add_row_arch(a2, x2, &mut self.s1_next, &mut self.tmp_mn, m, n);
            }
        }
        if let (Some(b2), Some(x2)) = (&self.col_arch2, x_prev2) {
            Self::add_col_arch(b2, x2, &mut self.s2_next, &mut self.tmp_nm, m, n);
        }
        if let Some(g2) = &self.row_garch2 {
            Self::add_garch(g2, &self.s1_lag, &mut self.s1_next, &mut self.tmp_dd, m);
        }
        if let Some(g2) = &self.col_garch2 {
            Self::add_garch(g2, &self.s2_lag, &mut self.s2_next, &mut self.tmp_dd, n);
        }
        let y_next = self.omega + self.alpha[0] * xn2 + self.beta[0] * self.y
            + self.alpha[1] * xn2_2
            + self.beta[1] * self.y_lag;
        // rotate: lag <- current <- next
        std::mem::swap(&mut self.s1, &mut self.s1_lag);
        std::mem::swap(&mut self.s1, &mut self.s1_next);
        std::mem::swap(&mut self.s2, &mut self.s2_lag);
        std::mem::swap(&mut self.s2, &mut self.s2_next);
        self.y_lag = self.y;
        self.y = y_next;
    }
}

fn check_dims(panel: &MatrixPanel, theta: &Theta) -> Result<()> {
    if panel.dims() != theta.dims() {
        return Err(Error::DimensionMismatch(format!(
            "panel is {:?}, parameters are {:?}",
            panel.dims(),
            theta.dims()
        )));
    }
    Ok(())
}

const TRACE_FLOOR: f64 = 1e-300;

fn normalized_state(rec: &Recursion, t: usize) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, f64)> {
    let (m, n) = (rec.m, rec.n);
    let s1 = DMatrix::from_column_slice(m, m, &rec.s1);
    let s2 = DMatrix::from_column_slice(n, n, &rec.s2);
    let tr1 = s1.trace();
    let tr2 = s2.trace();
    if !(tr1 > TRACE_FLOOR) || !(tr2 > TRACE_FLOOR) || !tr1.is_finite() || !tr2.is_finite() {
        return Err(Error::Numerical(format!(
            "driver trace numerically degenerate at t={} (tr S1 = {tr1:.3e}, tr S2 = {tr2:.3e})",
            t + 1
        )));
    }
    let u = &s1 * (rec.y / tr1);
    let v = &s2 / tr2;
    Ok((s1, s2, u, v, rec.y))
}

/// Run the filtering recursions over a panel, returning the full state path.
pub fn filter(panel: &MatrixPanel, theta: &Theta) -> Result<StatePath> {
    check_dims(panel, theta)?;
    let tlen = panel.len();
    let mut rec = Recursion::new(theta);
    let mut path = StatePath {
        s1: Vec::with_capacity(tlen),
        s2: Vec::with_capacity(tlen),
        y: Vec::with_capacity(tlen),
        u: Vec::with_capacity(tlen),
        v: Vec::with_capacity(tlen),
    };
    for t in 0..tlen {
        let x_prev = (t >= 1).then(|| panel.get(t - 1).as_slice());
        let x_prev2 = (t >= 2).then(|| panel.get(t - 2).as_slice());
        rec.step(x_prev, x_prev2);
        let (s1, s2, u, v, y) = normalized_state(&rec, t)?;
        path.s1.push(s1);
        path.s2.push(s2);
        path.u.push(u);
        path.v.push(v);
        path.y.push(y);
    }
    Ok(path)
}

/// One-step-ahead state: `(U, V, y)` at time T+1 given observations up to T.
pub fn forecast_state(panel: &MatrixPanel, theta: &Theta) -> Result<(DMatrix<f64>, DMatrix<f64>, f64)> {
    check_dims(panel, theta)?;
    let tlen = panel.len();
    let mut rec = Recursion::new(theta);
    for t in 0..=tlen {
        let x_prev = (t >= 1).then(|| panel.get(t - 1).as_slice());
        let x_prev2 = (t >= 2).then(|| panel.get(t - 2).as_slice());
        rec.step(x_prev, x_prev2);
    }
    let (_, _, u, v, y) = normalized_state(&rec, tlen)?;
    Ok((u, v, y))
}

/// Objective value returned when a parameter point makes the likelihood
/// unevaluable (singular drivers, non-positive trace process). Large enough
/// that line searches back away, finite so the optimizer never sees NaN.
pub(crate) const PENALTY: f64 = 1e12;

/// Allocation-free evaluator of the Gaussian quasi log-likelihood using the
/// Kronecker structure: `log|Σ_t| = n log|S1| + m log|S2| + mn log(y/(tr1 tr2))`
/// and the quadratic form as `(tr1 tr2 / y) tr(S2^{-1} X' S1^{-1} X)`. The
/// mn×mn matrix `Σ_t` is never assembled.
pub(crate) struct LikelihoodEvaluator {
    rec: Recursion,
    chol1: Vec<f64>,
    chol2: Vec<f64>,
    w: Vec<f64>,
    g: Vec<f64>,
}

pub(crate) struct ObsTerm {
    /// Per-observation contribution `l_t = (log|Σ_t| + q_t)/2`.
    pub l: f64,
    /// Quadratic form `q_t = vec(X_t)' Σ_t^{-1} vec(X_t)`.
    pub q: f64,
}

impl LikelihoodEvaluator {
    pub fn new(theta: &Theta) -> Self {
        let rec = Recursion::new(theta);
        let (m, n) = (rec.m, rec.n);
        LikelihoodEvaluator {
            rec,
            chol1: vec![0.0; m * m],
            chol2: vec![0.0; n * n],
            w: vec![0.0; m * n],
            g: vec![0.0; n * m],
        }
    }

    /// Average objective `L̃_T = (1/2T) Σ_t (log|Σ_t| + q_t)`, or [`PENALTY`]
    /// when some state is unevaluable.
    pub fn average(&mut self, panel: &MatrixPanel) -> f64 {
        let tlen = panel.len();
        let mut acc = 0.0;
        let mut driver = PanelDriver::new(panel, &mut self.rec);
        for t in 0..tlen {
            driver.advance(t);
            match obs_term(
                &driver.rec,
                panel.get(t).as_slice(),
                &mut self.chol1,
                &mut self.chol2,
                &mut self.w,
                &mut self.g,
            ) {
                Some(term) => acc += term.l,
                None => return PENALTY,
            }
        }
        let avg = acc / tlen as f64;
        if avg.is_finite() {
            avg
        } else {
            PENALTY
        }
    }

    /// Per-observation contributions `l_t`; `None` when unevaluable.
    pub fn per_observation(&mut self, panel: &MatrixPanel) -> Option<Vec<f64>> {
        let tlen = panel.len();
        let mut out = Vec::with_capacity(tlen);
        let mut driver = PanelDriver::new(panel, &mut self.rec);
        for t in 0..tlen {
            driver.advance(t);
            let term = obs_term(
                &driver.rec,
                panel.get(t).as_slice(),
                &mut self.chol1,
                &mut self.chol2,
                &mut self.w,
                &mut self.g,
            )?;
            if !term.l.is_finite() {
                return None;
            }
            out.push(term.l);
        }
        Some(out)
    }

    /// Quadratic forms `q_t`; `None` when unevaluable.
    pub fn quadratic_forms(&mut self, panel: &MatrixPanel) -> Option<Vec<f64>> {
        let tlen = panel.len();
        let mut out = Vec::with_capacity(tlen);
        let mut driver = PanelDriver::new(panel, &mut self.rec);
        for t in 0..tlen {
            driver.advance(t);
            let term = obs_term(
                &driver.rec,
                panel.get(t).as_slice(),
                &mut self.chol1,
                &mut self.chol2,
                &mut self.w,
                &mut self.g,
            )?;
            if !term.q.is_finite() {
                return None;
            }
            out.push(term.q);
        }
        Some(out)
    }

    /// Store the normalized factors `U_t` and `V_t` flattened per time point
    /// (m²- and n²-sized blocks). Returns false when a state degenerates.
    pub fn uv_path(&mut self, panel: &MatrixPanel, u_out: &mut [f64], v_out: &mut [f64]) -> bool {
        let (m, n) = (self.rec.m, self.rec.n);
        let tlen = panel.len();
        debug_assert_eq!(u_out.len(), tlen * m * m);
        debug_assert_eq!(v_out.len(), tlen * n * n);
        let mut driver = PanelDriver::new(panel, &mut self.rec);
        for t in 0..tlen {
            driver.advance(t);
            let tr1 = small::trace(&driver.rec.s1, m);
            let tr2 = small::trace(&driver.rec.s2, n);
            let y = driver.rec.y;
            if !(tr1 > TRACE_FLOOR && tr2 > TRACE_FLOOR && y > 0.0) {
                return false;
            }
            let cu = y / tr1;
            for (dst, src) in u_out[t * m * m..(t + 1) * m * m].iter_mut().zip(&driver.rec.s1) {
                *dst = cu * src;
            }
            let cv = 1.0 / tr2;
            for (dst, src) in v_out[t * n * n..(t + 1) * n * n].iter_mut().zip(&driver.rec.s2) {
                *dst = cv * src;
            }
        }
        true
    }
}

struct PanelDriver<'a> {
    panel: &'a MatrixPanel,
    rec: &'a mut Recursion,
}

impl<'a> PanelDriver<'a> {
    fn new(panel: &'a MatrixPanel, rec: &'a mut Recursion) -> Self {
        rec.reset();
        PanelDriver { panel, rec }
    }

    fn advance(&mut self, t: usize) {
        let x_prev = (t >= 1).then(|| self.panel.get(t - 1).as_slice());
        let x_prev2 = (t >= 2).then(|| self.panel.get(t - 2).as_slice());
        self.rec.step(x_prev, x_prev2);
    }
}

fn obs_term(
    rec: &Recursion,
    x: &[f64],
    chol1: &mut [f64],
    chol2: &mut [f64],
    w: &mut [f64],
    g: &mut [f64],
) -> Option<ObsTerm> {
    let (m, n) = (rec.m, rec.n);
    let y = rec.y;
    if !(y > 0.0) || !y.is_finite() {
        return None;
    }
    chol1.copy_from_slice(&rec.s1);
    if !small::chol_lower(chol1, m) {
        return None;
    }
    chol2.copy_from_slice(&rec.s2);
    if !small::chol_lower(chol2, n) {
        return None;
    }
    let tr1 = small::trace(&rec.s1, m);
    let tr2 = small::trace(&rec.s2, n);
    let logdet1 = small::logdet_from_chol(chol1, m);
    let logdet2 = small::logdet_from_chol(chol2, n);
    // q_raw = tr(S2^{-1} X' S1^{-1} X) = |L2^{-1} (L1^{-1} X)'|_F^2
    w.copy_from_slice(x);
    small::solve_lower(chol1, w, m, n);
    for j in 0..m {
        for i in 0..n {
            g[j * n + i] = w[i * m + j];
        }
    }
    small::solve_lower(chol2, g, n, m);
    let q_raw = small::frob_sq(&g[..m * n]);
    let q = tr1 * tr2 / y * q_raw;
    let logdet_sigma =
        n as f64 * logdet1 + m as f64 * logdet2 + (m * n) as f64 * (y / (tr1 * tr2)).ln();
    let l = 0.5 * (logdet_sigma + q);
    if l.is_finite() {
        Some(ObsTerm { l, q })
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{SecondOrderParams, SideParams, TraceParams, Transform, ThetaLayout};
    use nalgebra::{DMatrix, DVector};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn full_theta_2x2() -> Theta {
        Theta {
            trace: TraceParams { omega: 0.5, alpha: 0.2, beta: 0.3 },
            row: SideParams {
                intercept_root: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 0.8]),
                arch: DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.0, 0.2]),
                garch: DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.1, 0.4]),
                structure: Structure::Full,
            },
            col: SideParams {
                intercept_root: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.2, 0.7]),
                arch: DMatrix::from_row_slice(2, 2, &[0.25, 0.05, 0.1, 0.15]),
                garch: DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.0, 0.2]),
                structure: Structure::Full,
            },
            second: None,
        }
    }

    fn random_panel(m: usize, n: usize, tlen: usize, seed: u64) -> MatrixPanel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..tlen)
            .map(|_| DMatrix::from_fn(m, n, |_, _| rng.random::<f64>() * 2.0 - 1.0))
            .collect();
        MatrixPanel::new(data).unwrap()
    }

    fn random_theta(m: usize, n: usize, structure: Structure, seed: u64) -> Theta {
        let layout = ThetaLayout { m, n, row_structure: structure, col_structure: structure, second_order: false };
        let tf = Transform::new(layout);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = DVector::from_fn(layout.param_count(), |_, _| rng.random::<f64>() * 2.0 - 1.0);
        tf.unpack(&v).unwrap()
    }

    #[test]
    fn scalar_case_reduces_to_garch() {
        // independent scalar GARCH(1,1) recursion with zero initial values
        let panel = random_panel(1, 1, 200, 5);
        let theta = random_theta(1, 1, Structure::Full, 9);
        let path = filter(&panel, &theta).unwrap();
        let (w, a, b) = (theta.trace.omega, theta.trace.alpha, theta.trace.beta);
        let mut sigma2 = 0.0;
        for t in 0..panel.len() {
            let x_prev = if t >= 1 { panel.get(t - 1)[(0, 0)] } else { 0.0 };
            sigma2 = w + a * x_prev * x_prev + b * sigma2;
            assert!((path.y[t] - sigma2).abs() < 1e-12 * sigma2.max(1.0));
            assert!((path.u[t][(0, 0)] - sigma2).abs() < 1e-12 * sigma2.max(1.0));
            assert_eq!(path.v[t][(0, 0)], 1.0);
        }
    }

    #[test]
    fn intercept_only_is_constant() {
        let mut theta = full_theta_2x2();
        theta.trace.alpha = 0.0;
        theta.trace.beta = 0.0;
        theta.row.arch.fill(0.0);
        theta.row.garch.fill(0.0);
        theta.col.arch.fill(0.0);
        theta.col.garch.fill(0.0);
        let panel = random_panel(2, 2, 50, 1);
        let path = filter(&panel, &theta).unwrap();
        let gram_row = &theta.row.intercept_root * theta.row.intercept_root.transpose();
        for t in 0..panel.len() {
            assert!((path.s1[t].clone() - &gram_row).amax() < 1e-14);
            assert!((path.y[t] - theta.trace.omega).abs() < 1e-14);
        }
    }

    #[test]
    fn one_step_matches_direct_evaluation() {
        // evaluate the recursion at t=2 with dense matrix expressions
        let theta = full_theta_2x2();
        let panel = random_panel(2, 2, 2, 42);
        let x1 = panel.get(0).clone();
        let path = filter(&panel, &theta).unwrap();

        let a0g = &theta.row.intercept_root * theta.row.intercept_root.transpose();
        let b0g = &theta.col.intercept_root * theta.col.intercept_root.transpose();
        assert!((path.s1[0].clone() - &a0g).amax() < 1e-14);
        assert!((path.s2[0].clone() - &b0g).amax() < 1e-14);
        assert!((path.y[0] - theta.trace.omega).abs() < 1e-14);

        let s1_2 = &a0g
            + &theta.row.arch * &x1 * x1.transpose() * theta.row.arch.transpose()
            + &theta.row.garch * &a0g * theta.row.garch.transpose();
        let s2_2 = &b0g
            + &theta.col.arch * x1.transpose() * &x1 * theta.col.arch.transpose()
            + &theta.col.garch * &b0g * theta.col.garch.transpose();
        let y_2 = theta.trace.omega
            + theta.trace.alpha * x1.norm_squared()
            + theta.trace.beta * theta.trace.omega;
        assert!((path.s1[1].clone() - &s1_2).amax() < 1e-13);
        assert!((path.s2[1].clone() - &s2_2).amax() < 1e-13);
        assert!((path.y[1] - y_2).abs() < 1e-13);

        // with zero GARCH matrices the one-step state is intercept + ARCH term
        let mut theta0 = theta.clone();
        theta0.row.garch.fill(0.0);
        let path0 = filter(&panel, &theta0).unwrap();
        let want = &a0g + &theta0.row.arch * &x1 * x1.transpose() * theta0.row.arch.transpose();
        assert!((path0.s1[1].clone() - want).amax() < 1e-13);
    }

    #[test]
    fn trace_identities_hold() {
        for seed in 0..5u64 {
            let theta = random_theta(3, 2, Structure::Diagonal, seed);
            let panel = random_panel(3, 2, 120, seed + 100);
            let path = filter(&panel, &theta).unwrap();
            for t in 0..panel.len() {
                assert!((path.v[t].trace() - 1.0).abs() < 1e-12);
                assert!((path.u[t].trace() - path.y[t]).abs() < 1e-10 * path.y[t]);
            }
        }
    }

    #[test]
    fn filter_is_scale_free_in_the_drivers() {
        // scaling A0 and A1 by sqrt(c) scales S_{1,t} by c exactly (the
        // GARCH term is already linear in S), and the normalization
        // S_{1,t}/tr(S_{1,t}) makes U_t invariant to that scaling
        let theta = random_theta(3, 3, Structure::Full, 2);
        let panel = random_panel(3, 3, 80, 3);
        let mut scaled = theta.clone();
        let c: f64 = 3.7;
        scaled.row.intercept_root *= c.sqrt();
        scaled.row.arch *= c.sqrt();
        let a = filter(&panel, &theta).unwrap();
        let b = filter(&panel, &scaled).unwrap();
        for t in 0..panel.len() {
            assert!((a.u[t].clone() - &b.u[t]).amax() < 1e-11 * a.u[t].amax().max(1.0));
            assert!((a.s1[t].clone() * c - &b.s1[t]).amax() < 1e-10 * (c * a.s1[t].amax()).max(1.0));
        }
    }

    #[test]
    fn drivers_stay_positive_definite() {
        let theta = random_theta(3, 3, Structure::Diagonal, 8);
        let panel = random_panel(3, 3, 150, 9);
        let path = filter(&panel, &theta).unwrap();
        for t in 0..panel.len() {
            assert!(crate::linalg::min_eigenvalue(&path.s1[t]) > 0.0);
            assert!(crate::linalg::min_eigenvalue(&path.s2[t]) > 0.0);
        }
    }

    #[test]
    fn order2_with_zero_second_lag_equals_order1() {
        let theta = full_theta_2x2();
        let mut theta2 = theta.clone();
        theta2.second = Some(SecondOrderParams::zeros(2, 2));
        let panel = random_panel(2, 2, 60, 77);
        let a = filter(&panel, &theta).unwrap();
        let b = filter(&panel, &theta2).unwrap();
        for t in 0..panel.len() {
            assert_eq!(a.s1[t], b.s1[t]);
            assert_eq!(a.s2[t], b.s2[t]);
            assert_eq!(a.y[t], b.y[t]);
        }
    }

    #[test]
    fn order2_second_lag_enters_the_recursion() {
        let mut theta2 = full_theta_2x2();
        let mut second = SecondOrderParams::zeros(2, 2);
        second.trace_arch = 0.1;
        second.row_arch = DMatrix::from_row_slice(2, 2, &[0.2, 0.0, 0.0, 0.2]);
        theta2.second = Some(second.clone());
        let panel = random_panel(2, 2, 4, 13);
        let path = filter(&panel, &theta2).unwrap();
        // direct evaluation at t=3: lag-2 observation is X_1
        let base = filter(&panel, &full_theta_2x2()).unwrap();
        let x1 = panel.get(0);
        let want_s1 = base.s1[2].clone() + &second.row_arch * x1 * x1.transpose() * second.row_arch.transpose();
        let want_y = base.y[2] + second.trace_arch * x1.norm_squared();
        assert!((path.s1[2].clone() - want_s1).amax() < 1e-13);
        assert!((path.y[2] - want_y).abs() < 1e-13);
    }

    #[test]
    fn sigma_is_the_kronecker_product() {
        // identity-like construction: U = (y/m) I, V = I/n gives a scaled identity
        let m = 2;
        let n = 3;
        let path = StatePath {
            s1: vec![DMatrix::identity(m, m)],
            s2: vec![DMatrix::identity(n, n)],
            y: vec![4.2],
            u: vec![DMatrix::identity(m, m) * (4.2 / m as f64)],
            v: vec![DMatrix::identity(n, n) / n as f64],
        };
        let sigma = path.sigma(0).unwrap();
        let want = DMatrix::identity(m * n, m * n) * (4.2 / (m * n) as f64);
        assert!((sigma - want).amax() < 1e-14);
        assert!(path.sigma(1).is_err());
    }

    #[test]
    fn sigma_trace_and_eigenvalues() {
        let theta = random_theta(2, 3, Structure::Full, 21);
        let panel = random_panel(2, 3, 40, 22);
        let path = filter(&panel, &theta).unwrap();
        for t in [0usize, 7, 39] {
            let sigma = path.sigma(t).unwrap();
            assert!((sigma.trace() - path.y[t]).abs() < 1e-10 * path.y[t]);
            // eigenvalues of V ⊗ U are all pairwise eigenvalue products
            let mut direct = sigma.symmetric_eigen().eigenvalues.as_slice().to_vec();
            let eu = path.u[t].clone().symmetric_eigen().eigenvalues;
            let ev = path.v[t].clone().symmetric_eigen().eigenvalues;
            let mut products: Vec<f64> =
                eu.iter().flat_map(|a| ev.iter().map(move |b| a * b)).collect();
            direct.sort_by(|a, b| a.partial_cmp(b).unwrap());
            products.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (d, p) in direct.iter().zip(&products) {
                assert!((d - p).abs() < 1e-8 * p.abs().max(1e-8));
            }
        }
    }

    #[test]
    fn conditional_covariances() {
        let theta = random_theta(3, 2, Structure::Diagonal, 31);
        let panel = random_panel(3, 2, 30, 32);
        let path = filter(&panel, &theta).unwrap();
        for t in 0..panel.len() {
            let rc = path.row_cov(t).unwrap();
            let cc = path.col_cov(t).unwrap();
            assert!((rc.trace() - path.y[t]).abs() < 1e-10 * path.y[t]);
            assert!((cc.trace() - path.y[t]).abs() < 1e-10 * path.y[t]);
            // summing the m×m diagonal blocks of Σ reproduces the row covariance
            let sigma = path.sigma(t).unwrap();
            let (m, n) = panel.dims();
            let mut block_sum = DMatrix::zeros(m, m);
            for j in 0..n {
                block_sum += sigma.view((j * m, j * m), (m, m));
            }
            assert!((block_sum - rc).amax() < 1e-10 * path.y[t]);
        }

        // scalar case: both conditional covariances equal y_t
        let theta1 = random_theta(1, 1, Structure::Full, 33);
        let panel1 = random_panel(1, 1, 10, 34);
        let path1 = filter(&panel1, &theta1).unwrap();
        for t in 0..panel1.len() {
            assert!((path1.row_cov(t).unwrap()[(0, 0)] - path1.y[t]).abs() < 1e-12 * path1.y[t]);
            assert!((path1.col_cov(t).unwrap()[(0, 0)] - path1.y[t]).abs() < 1e-12 * path1.y[t]);
        }
    }

    #[test]
    fn forecast_state_extends_the_path() {
        let theta = full_theta_2x2();
        let panel = random_panel(2, 2, 25, 55);
        let (u, v, y) = forecast_state(&panel, &theta).unwrap();
        // the forecast state equals the filtered state of the panel extended
        // by an arbitrary observation (the state at T+1 ignores X_{T+1})
        let mut data = panel.data().to_vec();
        data.push(DMatrix::zeros(2, 2));
        let extended = MatrixPanel::new(data).unwrap();
        let path = filter(&extended, &theta).unwrap();
        assert!((path.u[25].clone() - u).amax() < 1e-14);
        assert!((path.v[25].clone() - v).amax() < 1e-14);
        assert!((path.y[25] - y).abs() < 1e-14);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let theta = full_theta_2x2();
        let panel = random_panel(3, 2, 5, 1);
        assert!(filter(&panel, &theta).is_err());
    }
}
