//! Factor extension for large panels: `X_t = R F_t C' + E_t` with a small
//! latent factor matrix following the matrix GARCH dynamics.
//!
//! Loadings are estimated by iterated projected eigendecompositions,
//! varimax-rotated for interpretability, and the high-dimensional
//! conditional covariance of `vec(X_t)` is reassembled as
//! `Σ_{x,t} = (C ⊗ R)(V_{f,t} ⊗ U_{f,t})(C ⊗ R)' + Σ_e`
//! `        = (C V_{f,t} C') ⊗ (R U_{f,t} R') + Σ_e`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimate::{fit, FitOptions, FitResult};
use crate::filter::{filter, forecast_state, StatePath};
use crate::linalg::sym_eigen_sorted;
use crate::panel::MatrixPanel;

/// Dense idiosyncratic covariance below this vec-dimension; diagonal above.
const DENSE_SIGMA_E_LIMIT: usize = 256;

/// Idiosyncratic covariance `Σ_e = E[vec(E_t) vec(E_t)']`.
#[derive(Debug, Clone)]
pub enum IdiosyncraticCov {
    /// Full mn×mn matrix (kept when mn ≤ 256).
    Dense(DMatrix<f64>),
    /// Diagonal only, for very large panels.
    Diagonal(DVector<f64>),
}

impl IdiosyncraticCov {
    /// Materialize as a dense matrix.
    pub fn full(&self) -> DMatrix<f64> {
        match self {
            IdiosyncraticCov::Dense(s) => s.clone(),
            IdiosyncraticCov::Diagonal(d) => DMatrix::from_diagonal(d),
        }
    }

    fn add_into(&self, out: &mut DMatrix<f64>) {
        match self {
            IdiosyncraticCov::Dense(s) => *out += s,
            IdiosyncraticCov::Diagonal(d) => {
                for i in 0..d.len() {
                    out[(i, i)] += d[i];
                }
            }
        }
    }
}

/// Fitted factor model with its conditional-covariance machinery.
#[derive(Debug, Clone)]
pub struct FactorFit {
    /// Varimax-rotated row loadings (m×k1, orthonormal columns).
    pub row_loadings: DMatrix<f64>,
    /// Varimax-rotated column loadings (n×k2, orthonormal columns).
    pub col_loadings: DMatrix<f64>,
    /// Row factor count.
    pub k1: usize,
    /// Column factor count.
    pub k2: usize,
    /// Extracted factor panel `F_t = R' X_t C`.
    pub factors: MatrixPanel,
    /// Idiosyncratic covariance estimate.
    pub sigma_e: IdiosyncraticCov,
    /// Matrix GARCH fit on the factor panel.
    pub garch: FitResult,
    /// Filtered factor states at the fit.
    pub factor_states: StatePath,
    /// One-step-ahead factor state `(U_f, V_f, y_f)` at time T+1.
    pub forecast: (DMatrix<f64>, DMatrix<f64>, f64),
}

impl FactorFit {
    /// Fitted common component `R F_t C'`.
    pub fn fitted(&self, t: usize) -> DMatrix<f64> {
        &self.row_loadings * self.factors.get(t) * self.col_loadings.transpose()
    }

    /// Conditional covariance forecast of `vec(X_t)` at 0-based time `t`;
    /// `t = T` yields the one-step-ahead forecast.
    pub fn sigma_x(&self, t: usize) -> Result<DMatrix<f64>> {
        let tlen = self.factors.len();
        let (u_f, v_f) = if t < tlen {
            (&self.factor_states.u[t], &self.factor_states.v[t])
        } else if t == tlen {
            (&self.forecast.0, &self.forecast.1)
        } else {
            return Err(Error::IndexOutOfBounds(format!(
                "covariance forecast at t={t} with T={tlen} (one step ahead is t=T)"
            )));
        };
        let row_part = &self.row_loadings * u_f * self.row_loadings.transpose();
        let col_part = &self.col_loadings * v_f * self.col_loadings.transpose();
        let mut sigma = col_part.kronecker(&row_part);
        self.sigma_e.add_into(&mut sigma);
        crate::linalg::symmetrize(&mut sigma);
        Ok(sigma)
    }
}

fn sign_normalize_columns(mat: &mut DMatrix<f64>) {
    for j in 0..mat.ncols() {
        let col = mat.column(j);
        let mut lead = 0usize;
        let mut best = -1.0;
        for i in 0..col.len() {
            if col[i].abs() > best {
                best = col[i].abs();
                lead = i;
            }
        }
        if col[lead] < 0.0 {
            mat.column_mut(j).neg_mut();
        }
    }
}

fn top_eigenvectors(mat: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let (_, vecs) = sym_eigen_sorted(mat);
    let mut out = vecs.columns(0, k).clone_owned();
    sign_normalize_columns(&mut out);
    out
}

fn row_second_moment(panel: &MatrixPanel) -> DMatrix<f64> {
    let (m, n) = panel.dims();
    let mut acc = DMatrix::zeros(m, m);
    for x in panel.data() {
        acc.gemm(1.0, x, &x.transpose(), 1.0);
    }
    acc / (panel.len() * n) as f64
}

fn col_second_moment(panel: &MatrixPanel) -> DMatrix<f64> {
    let (m, n) = panel.dims();
    let mut acc = DMatrix::zeros(n, n);
    for x in panel.data() {
        acc.gemm(1.0, &x.transpose(), x, 1.0);
    }
    acc / (panel.len() * m) as f64
}

fn projected_row_moment(panel: &MatrixPanel, c: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, _) = panel.dims();
    let k = c.ncols();
    let mut acc = DMatrix::zeros(m, m);
    for x in panel.data() {
        let xc = x * c;
        acc.gemm(1.0, &xc, &xc.transpose(), 1.0);
    }
    acc / (panel.len() * k) as f64
}

fn projected_col_moment(panel: &MatrixPanel, r: &DMatrix<f64>) -> DMatrix<f64> {
    let (_, n) = panel.dims();
    let k = r.ncols();
    let mut acc = DMatrix::zeros(n, n);
    for x in panel.data() {
        let rx = r.transpose() * x;
        acc.gemm(1.0, &rx.transpose(), &rx, 1.0);
    }
    acc / (panel.len() * k) as f64
}

/// Estimate orthonormal row/column loadings spanning the factor spaces by
/// iterated projected eigendecompositions: starting from the top
/// eigenvectors of the unprojected row second moment, alternate projecting
/// one side onto the other until the spanned subspaces stabilize.
pub fn estimate_loadings(
    panel: &MatrixPanel,
    k1: usize,
    k2: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (m, n) = panel.dims();
    if k1 == 0 || k2 == 0 || k1 > m || k2 > n {
        return Err(Error::InvalidParameter(format!(
            "factor counts ({k1},{k2}) out of range for a {m}x{n} panel"
        )));
    }
    if panel.len() < 2 {
        return Err(Error::InvalidData("loading estimation needs T >= 2".into()));
    }
    let mut r = top_eigenvectors(&row_second_moment(panel), k1);
    let mut c = top_eigenvectors(&projected_col_moment(panel, &r), k2);
    for _ in 0..200 {
        let r_new = top_eigenvectors(&projected_row_moment(panel, &c), k1);
        let c_new = top_eigenvectors(&projected_col_moment(panel, &r_new), k2);
        let drift = (&r_new * r_new.transpose() - &r * r.transpose()).norm()
            + (&c_new * c_new.transpose() - &c * c.transpose()).norm();
        r = r_new;
        c = c_new;
        if drift < 1e-8 {
            break;
        }
    }
    Ok((r, c))
}

/// Index (1-based) maximizing consecutive eigenvalue ratios; ties keep the
/// smaller index.
pub(crate) fn ratio_argmax(eigs: &[f64], k_max: usize) -> usize {
    let floor = eigs[0].abs() * 1e-15 + f64::MIN_POSITIVE;
    let mut best_k = 1;
    let mut best = -1.0;
    for j in 1..=k_max {
        let ratio = eigs[j - 1].max(floor) / eigs[j].max(floor);
        if ratio > best {
            best = ratio;
            best_k = j;
        }
    }
    best_k
}

/// Select the factor counts by the eigenvalue-ratio method, applied to the
/// row/column second moments after one projection round with `k_max`
/// candidate directions.
pub fn eigenvalue_ratio(panel: &MatrixPanel, k_max: usize) -> Result<(usize, usize)> {
    let (m, n) = panel.dims();
    if k_max == 0 || k_max >= m.min(n) {
        return Err(Error::InvalidParameter(format!(
            "k_max = {k_max} must lie in [1, min(m,n)-1] for a {m}x{n} panel"
        )));
    }
    let row_m0 = row_second_moment(panel);
    let col_m0 = col_second_moment(panel);
    if row_m0.trace() <= 1e-300 || col_m0.trace() <= 1e-300 {
        return Err(Error::InvalidData("panel second moments are numerically zero".into()));
    }
    let r0 = top_eigenvectors(&row_m0, k_max);
    let c0 = top_eigenvectors(&col_m0, k_max);
    let (row_eigs, _) = sym_eigen_sorted(&projected_row_moment(panel, &c0));
    let (col_eigs, _) = sym_eigen_sorted(&projected_col_moment(panel, &r0));
    let k1 = ratio_argmax(row_eigs.as_slice(), k_max);
    let k2 = ratio_argmax(col_eigs.as_slice(), k_max);
    Ok((k1, k2))
}

/// Varimax criterion: total column variance of squared loadings.
fn varimax_criterion(load: &DMatrix<f64>) -> f64 {
    let d = load.nrows() as f64;
    let mut acc = 0.0;
    for j in 0..load.ncols() {
        let col = load.column(j);
        let s2: f64 = col.iter().map(|v| v * v).sum();
        let s4: f64 = col.iter().map(|v| v.powi(4)).sum();
        acc += s4 / d - (s2 / d).powi(2);
    }
    acc
}

/// Varimax rotation by cycling pairwise plane rotations. Returns the
/// rotated loadings and the accumulated orthogonal rotation `G` with
/// `rotated = load * G`.
pub fn varimax(load: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (d, k) = (load.nrows(), load.ncols());
    let mut rotated = load.clone();
    let mut g = DMatrix::identity(k, k);
    if k == 1 {
        return (rotated, g);
    }
    let mut crit = varimax_criterion(&rotated);
    for _ in 0..100 {
        for p in 0..k - 1 {
            for q in p + 1..k {
                // optimal plane angle from the quartic criterion
                let (mut a, mut b, mut c, mut dd) = (0.0, 0.0, 0.0, 0.0);
                for i in 0..d {
                    let x = rotated[(i, p)];
                    let y = rotated[(i, q)];
                    let u = x * x - y * y;
                    let v = 2.0 * x * y;
                    a += u;
                    b += v;
                    c += u * u - v * v;
                    dd += u * v;
                }
                let num = 2.0 * (dd - a * b / d as f64);
                let den = c - (a * a - b * b) / d as f64;
                let phi = 0.25 * num.atan2(den);
                if phi.abs() < 1e-12 {
                    continue;
                }
                let (s, co) = phi.sin_cos();
                for i in 0..d {
                    let x = rotated[(i, p)];
                    let y = rotated[(i, q)];
                    rotated[(i, p)] = co * x + s * y;
                    rotated[(i, q)] = -s * x + co * y;
                }
                for i in 0..k {
                    let x = g[(i, p)];
                    let y = g[(i, q)];
                    g[(i, p)] = co * x + s * y;
                    g[(i, q)] = -s * x + co * y;
                }
            }
        }
        let new_crit = varimax_criterion(&rotated);
        if (new_crit - crit).abs() < 1e-8 {
            break;
        }
        crit = new_crit;
    }
    (rotated, g)
}

/// Extract the factor panel `F_t = R' X_t C`.
pub fn extract_factors(
    panel: &MatrixPanel,
    row_loadings: &DMatrix<f64>,
    col_loadings: &DMatrix<f64>,
) -> Result<MatrixPanel> {
    let (m, n) = panel.dims();
    if row_loadings.nrows() != m || col_loadings.nrows() != n {
        return Err(Error::DimensionMismatch("loadings do not match the panel".into()));
    }
    let data = panel
        .data()
        .iter()
        .map(|x| row_loadings.transpose() * x * col_loadings)
        .collect();
    match panel.time_labels() {
        Some(labels) => MatrixPanel::with_labels(data, labels.to_vec()),
        None => MatrixPanel::new(data),
    }
}

/// End-to-end factor pipeline: loadings → varimax → factor extraction →
/// matrix GARCH on the factors → idiosyncratic covariance and the
/// one-step-ahead state.
pub fn fit_factor_garch(
    panel: &MatrixPanel,
    k1: usize,
    k2: usize,
    options: &FitOptions,
) -> Result<FactorFit> {
    let (m, n) = panel.dims();
    let (r_raw, c_raw) = estimate_loadings(panel, k1, k2)?;
    let (row_loadings, _) = varimax(&r_raw);
    let (col_loadings, _) = varimax(&c_raw);
    let factors = extract_factors(panel, &row_loadings, &col_loadings)?;
    let garch = fit(&factors, options)?;
    let factor_states = filter(&factors, &garch.theta_hat)?;
    let forecast = forecast_state(&factors, &garch.theta_hat)?;

    let mn = m * n;
    let tlen = panel.len();
    let sigma_e = if mn <= DENSE_SIGMA_E_LIMIT {
        let mut acc = DMatrix::zeros(mn, mn);
        for t in 0..tlen {
            let resid = panel.get(t) - &row_loadings * factors.get(t) * col_loadings.transpose();
            let v = DVector::from_column_slice(resid.as_slice());
            acc.gemm(1.0 / tlen as f64, &v, &v.transpose(), 1.0);
        }
        IdiosyncraticCov::Dense(acc)
    } else {
        log::warn!("vec dimension {mn} > {DENSE_SIGMA_E_LIMIT}: keeping only the diagonal of the idiosyncratic covariance");
        let mut diag = DVector::zeros(mn);
        for t in 0..tlen {
            let resid = panel.get(t) - &row_loadings * factors.get(t) * col_loadings.transpose();
            for (k, e) in resid.as_slice().iter().enumerate() {
                diag[k] += e * e / tlen as f64;
            }
        }
        IdiosyncraticCov::Diagonal(diag)
    };

    Ok(FactorFit {
        row_loadings,
        col_loadings,
        k1,
        k2,
        factors,
        sigma_e,
        garch,
        factor_states,
        forecast,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{simulate, InnovationLaw};
    use nalgebra::DMatrix;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_orthonormal(d: usize, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(d, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let qr = a.qr();
        qr.q().columns(0, k).clone_owned()
    }

    /// noiseless rank-(k1,k2) panel X_t = R F_t C'
    fn noiseless_panel(
        m: usize,
        n: usize,
        k1: usize,
        k2: usize,
        tlen: usize,
        seed: u64,
    ) -> (MatrixPanel, DMatrix<f64>, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = random_orthonormal(m, k1, &mut rng);
        let c = random_orthonormal(n, k2, &mut rng);
        let data = (0..tlen)
            .map(|_| {
                let f = DMatrix::from_fn(k1, k2, |_, _| rng.sample::<f64, _>(StandardNormal));
                &r * f * c.transpose()
            })
            .collect();
        (MatrixPanel::new(data).unwrap(), r, c)
    }

    fn subspace_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a * a.transpose() - b * b.transpose()).norm()
    }

    #[test]
    fn noiseless_loadings_span_the_truth() {
        let (panel, r, c) = noiseless_panel(8, 6, 3, 2, 120, 5);
        let (r_hat, c_hat) = estimate_loadings(&panel, 3, 2).unwrap();
        assert!(subspace_distance(&r_hat, &r) < 1e-8);
        assert!(subspace_distance(&c_hat, &c) < 1e-8);
        // orthonormal columns
        assert!((r_hat.transpose() * &r_hat - DMatrix::identity(3, 3)).amax() < 1e-10);
        // exact reconstruction
        let f = extract_factors(&panel, &r_hat, &c_hat).unwrap();
        for t in [0usize, 50, 119] {
            let xhat = &r_hat * f.get(t) * c_hat.transpose();
            assert!((xhat - panel.get(t)).amax() < 1e-10);
        }
    }

    #[test]
    fn row_permutation_equivariance() {
        let (panel, _, _) = noiseless_panel(6, 5, 2, 2, 80, 9);
        let perm = [3usize, 0, 5, 1, 4, 2];
        let mut p = DMatrix::zeros(6, 6);
        for (i, &pi) in perm.iter().enumerate() {
            p[(i, pi)] = 1.0;
        }
        let permuted = MatrixPanel::new(panel.data().iter().map(|x| &p * x).collect()).unwrap();
        let (r1, _) = estimate_loadings(&panel, 2, 2).unwrap();
        let (r2, _) = estimate_loadings(&permuted, 2, 2).unwrap();
        assert!((&p * &r1 - &r2).amax() < 1e-9);
    }

    #[test]
    fn eigenvalue_ratio_noiseless_rank() {
        let (panel, _, _) = noiseless_panel(8, 8, 3, 3, 150, 13);
        let (k1, k2) = eigenvalue_ratio(&panel, 5).unwrap();
        assert_eq!((k1, k2), (3, 3));
        assert!(eigenvalue_ratio(&panel, 8).is_err());
        assert!(eigenvalue_ratio(&panel, 0).is_err());
    }

    #[test]
    fn ratio_ties_break_toward_smaller_k() {
        // identical ratios everywhere: keep k = 1
        let eigs = [8.0, 4.0, 2.0, 1.0];
        assert_eq!(ratio_argmax(&eigs, 3), 1);
        let eigs2 = [8.0, 4.0, 0.5, 0.25];
        assert_eq!(ratio_argmax(&eigs2, 3), 2);
    }

    #[test]
    fn varimax_recovers_a_rotated_sparse_pattern() {
        // sparse orthonormal loadings rotated by 45 degrees
        let sparse = DMatrix::from_row_slice(
            6,
            2,
            &[
                0.8, 0.0, 0.6, 0.0, 0.0, 0.0, 0.0, 0.7, 0.0, 0.5, 0.0, 0.5099019513592785,
            ],
        );
        // normalize columns to unit length
        let mut sparse = sparse;
        for j in 0..2 {
            let norm = sparse.column(j).norm();
            sparse.column_mut(j).scale_mut(1.0 / norm);
        }
        let angle = std::f64::consts::FRAC_PI_4;
        let rot = DMatrix::from_row_slice(
            2,
            2,
            &[angle.cos(), -angle.sin(), angle.sin(), angle.cos()],
        );
        let mixed = &sparse * &rot;
        let (recovered, g) = varimax(&mixed);
        // orthogonality preserved
        assert!((recovered.transpose() * &recovered - DMatrix::identity(2, 2)).amax() < 1e-10);
        assert!((&mixed * &g - &recovered).amax() < 1e-12);
        // criterion not smaller than at the input
        assert!(varimax_criterion(&recovered) >= varimax_criterion(&mixed) - 1e-12);
        // recovered pattern matches the sparse one up to column sign/permutation
        let mut best = f64::INFINITY;
        for perm in [[0usize, 1], [1usize, 0]] {
            for s0 in [-1.0, 1.0] {
                for s1 in [-1.0f64, 1.0] {
                    let mut cand = DMatrix::zeros(6, 2);
                    cand.set_column(0, &(recovered.column(perm[0]) * s0));
                    cand.set_column(1, &(recovered.column(perm[1]) * s1));
                    best = best.min((cand - &sparse).amax());
                }
            }
        }
        assert!(best < 1e-6, "sparse pattern not recovered: {best}");
    }

    #[test]
    fn varimax_k1_is_identity() {
        let load = DMatrix::from_column_slice(4, 1, &[0.5, 0.5, 0.5, 0.5]);
        let (rot, g) = varimax(&load);
        assert_eq!(g[(0, 0)], 1.0);
        assert!((rot - load).amax() == 0.0);
    }

    #[test]
    fn projection_orthogonality_of_residuals() {
        let (panel, _, _) = noiseless_panel(7, 6, 2, 3, 60, 21);
        // add noise so residuals are nonzero
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let noisy = MatrixPanel::new(
            panel
                .data()
                .iter()
                .map(|x| x + DMatrix::from_fn(7, 6, |_, _| 0.1 * rng.sample::<f64, _>(StandardNormal)))
                .collect(),
        )
        .unwrap();
        let (r, c) = estimate_loadings(&noisy, 2, 3).unwrap();
        let f = extract_factors(&noisy, &r, &c).unwrap();
        for t in [0usize, 30] {
            let xhat = &r * f.get(t) * c.transpose();
            let resid = noisy.get(t) - &xhat;
            // tr(Xhat E') = 0: the fitted part is the projection onto the
            // loading spaces
            let inner = (xhat.transpose() * resid).trace();
            assert!(inner.abs() < 1e-10, "inner product {inner}");
        }
    }

    #[test]
    fn sigma_x_identity_loadings_reduces_to_factor_covariance() {
        let theta = crate::experiments::estimation_design();
        let factors = simulate(&theta, 300, 100, &InnovationLaw::MatrixNormal, 31).unwrap();
        let options = FitOptions { multistarts: 1, ..FitOptions::default() };
        let ff = fit_factor_garch(&factors, 3, 3, &options).unwrap();
        // with k1 = m and k2 = n the loadings are orthogonal square matrices
        // and the reconstruction is exact, so Σ_e = 0 and Σ_x is the rotated
        // factor covariance with trace y_f
        for t in [0usize, 150, 300] {
            let sigma = ff.sigma_x(t).unwrap();
            let y = if t < 300 { ff.factor_states.y[t] } else { ff.forecast.2 };
            assert!((sigma.trace() - y).abs() < 1e-8 * y);
            assert!((sigma.clone() - sigma.transpose()).amax() < 1e-10);
            assert!(crate::linalg::min_eigenvalue(&sigma) > -1e-8 * sigma.amax());
        }
        assert!(ff.sigma_x(301).is_err());
        match &ff.sigma_e {
            IdiosyncraticCov::Dense(s) => assert!(s.amax() < 1e-16),
            _ => panic!("expected dense idiosyncratic covariance"),
        }
    }

    #[test]
    fn rotation_invariance_of_the_sandwich() {
        // rotating loadings and counter-rotating the factor states leaves
        // the fitted values and the covariance sandwich unchanged
        let (panel, _, _) = noiseless_panel(6, 6, 2, 2, 200, 41);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let noisy = MatrixPanel::new(
            panel
                .data()
                .iter()
                .map(|x| x * 3.0 + DMatrix::from_fn(6, 6, |_, _| 0.2 * rng.sample::<f64, _>(StandardNormal)))
                .collect(),
        )
        .unwrap();
        let options = FitOptions { multistarts: 1, ..FitOptions::default() };
        let ff = fit_factor_garch(&noisy, 2, 2, &options).unwrap();
        let q1 = {
            let a = DMatrix::from_row_slice(2, 2, &[0.6, -0.8, 0.8, 0.6]);
            a
        };
        let q2 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let t = 100usize;
        let sigma = ff.sigma_x(t).unwrap();
        // manual reassembly with rotated pieces
        let r_rot = &ff.row_loadings * &q1;
        let c_rot = &ff.col_loadings * &q2;
        let u_rot = q1.transpose() * &ff.factor_states.u[t] * &q1;
        let v_rot = q2.transpose() * &ff.factor_states.v[t] * &q2;
        let mut sigma_rot = (&c_rot * v_rot * c_rot.transpose())
            .kronecker(&(&r_rot * u_rot * r_rot.transpose()));
        ff.sigma_e.add_into(&mut sigma_rot);
        crate::linalg::symmetrize(&mut sigma_rot);
        assert!((sigma - sigma_rot).amax() < 1e-10);
        // fitted common component is invariant too
        let f_rot = q1.transpose() * ff.factors.get(t) * &q2;
        let fitted_rot = &r_rot * f_rot * c_rot.transpose();
        assert!((ff.fitted(t) - fitted_rot).amax() < 1e-10);
    }
}
