//! Volatility-forecast evaluation: entrywise losses, Diebold–Mariano
//! comparisons, and the standard baseline forecasters.
//!
//! The evaluation protocol fits each model on a training segment, fixes the
//! parameters, filters the full series, and scores the one-step-ahead
//! entry-variance forecasts on the held-out tail against squared returns.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::estimate::{fit, FitOptions};
use crate::filter::filter;
use crate::optim::{minimize, BfgsOptions};
use crate::panel::MatrixPanel;
use crate::params::Structure;

/// Point losses of one forecaster under one aggregation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValues {
    /// Mean squared error of the variance forecast against squared returns.
    pub mse: f64,
    /// Mean absolute error.
    pub mae: f64,
    /// Robust loss `log σ̂² + r²/σ̂²`; undefined when a forecast is not
    /// strictly positive.
    pub qlike: Option<f64>,
}

/// Entry losses under both aggregation conventions: averaged per entry and
/// summed over the mn entries (mean over test times either way).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntryLosses {
    /// Per-entry mean over times and entries.
    pub mean: LossValues,
    /// Entry sums (per-entry mean times mn).
    pub sum: LossValues,
}

/// Per-time loss series (summed over entries), the input of the DM test.
#[derive(Debug, Clone)]
pub struct LossSeries {
    /// Squared-error series.
    pub mse: Vec<f64>,
    /// Absolute-error series.
    pub mae: Vec<f64>,
    /// QLIKE series, when all forecasts are strictly positive.
    pub qlike: Option<Vec<f64>>,
}

fn check_forecast_inputs(var_forecasts: &[DMatrix<f64>], realized: &[DMatrix<f64>]) -> Result<()> {
    if var_forecasts.is_empty() || var_forecasts.len() != realized.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} forecasts against {} realizations",
            var_forecasts.len(),
            realized.len()
        )));
    }
    if var_forecasts[0].shape() != realized[0].shape() {
        return Err(Error::DimensionMismatch("forecast and realization shapes differ".into()));
    }
    Ok(())
}

/// Per-time loss series of entry-variance forecasts against the squared
/// values of the realized (demeaned) observations.
pub fn loss_series(var_forecasts: &[DMatrix<f64>], realized: &[DMatrix<f64>]) -> Result<LossSeries> {
    check_forecast_inputs(var_forecasts, realized)?;
    let positive = var_forecasts.iter().all(|f| f.iter().all(|v| *v > 0.0));
    let mut mse = Vec::with_capacity(realized.len());
    let mut mae = Vec::with_capacity(realized.len());
    let mut qlike = positive.then(|| Vec::with_capacity(realized.len()));
    for (f, x) in var_forecasts.iter().zip(realized) {
        let mut se = 0.0;
        let mut ae = 0.0;
        let mut ql = 0.0;
        for (v, r) in f.iter().zip(x.iter()) {
            let r2 = r * r;
            se += (v - r2) * (v - r2);
            ae += (v - r2).abs();
            if positive {
                ql += v.ln() + r2 / v;
            }
        }
        mse.push(se);
        mae.push(ae);
        if let Some(q) = qlike.as_mut() {
            q.push(ql);
        }
    }
    Ok(LossSeries { mse, mae, qlike })
}

/// Aggregate entry losses over test times and entries.
pub fn entry_losses(var_forecasts: &[DMatrix<f64>], realized: &[DMatrix<f64>]) -> Result<EntryLosses> {
    let series = loss_series(var_forecasts, realized)?;
    let h = series.mse.len() as f64;
    let mn = (realized[0].nrows() * realized[0].ncols()) as f64;
    let sum = LossValues {
        mse: series.mse.iter().sum::<f64>() / h,
        mae: series.mae.iter().sum::<f64>() / h,
        qlike: series.qlike.as_ref().map(|q| q.iter().sum::<f64>() / h),
    };
    let mean = LossValues {
        mse: sum.mse / mn,
        mae: sum.mae / mn,
        qlike: sum.qlike.map(|v| v / mn),
    };
    Ok(EntryLosses { mean, sum })
}

/// Diebold–Mariano outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DmTest {
    /// Normal test statistic and two-sided p-value. Positive statistics
    /// mean the first series has larger losses.
    Statistic {
        /// Studentized mean loss differential.
        stat: f64,
        /// Two-sided normal p-value.
        p_value: f64,
    },
    /// The loss differential is identically zero; no test is defined.
    Degenerate,
}

/// Diebold–Mariano test on aligned loss series, long-run variance by the
/// Bartlett kernel with lag `floor(H^{1/3})`.
pub fn dm_test(loss_a: &[f64], loss_b: &[f64]) -> Result<DmTest> {
    if loss_a.len() != loss_b.len() {
        return Err(Error::DimensionMismatch("loss series are not aligned".into()));
    }
    let h = loss_a.len();
    if h < 10 {
        return Err(Error::InvalidData(format!("DM test needs at least 10 forecasts, got {h}")));
    }
    let d: Vec<f64> = loss_a.iter().zip(loss_b).map(|(a, b)| a - b).collect();
    let dbar = d.iter().sum::<f64>() / h as f64;
    let centered: Vec<f64> = d.iter().map(|v| v - dbar).collect();
    let gamma = |k: usize| -> f64 {
        centered[k..]
            .iter()
            .zip(&centered[..h - k])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / h as f64
    };
    let q = (h as f64).powf(1.0 / 3.0).floor() as usize;
    let mut lrv = gamma(0);
    for k in 1..=q.min(h - 1) {
        lrv += 2.0 * (1.0 - k as f64 / (q as f64 + 1.0)) * gamma(k);
    }
    let scale = d.iter().map(|v| v.abs()).fold(0.0f64, f64::max);
    if scale == 0.0 || lrv <= 1e-300 {
        return Ok(DmTest::Degenerate);
    }
    let stat = dbar / (lrv / h as f64).sqrt();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let p_value = 2.0 * (1.0 - normal.cdf(stat.abs()));
    Ok(DmTest::Statistic { stat, p_value: p_value.clamp(0.0, 1.0) })
}

/// Baseline covariance forecasters for the comparison protocol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineModel {
    /// Independent scalar GARCH(1,1) per entry (the 1×1 reduction of the
    /// matrix model); diagonal covariance forecasts.
    UnivariateGarch,
    /// Variance-targeted diagonal BEKK per column vector; block-diagonal
    /// covariance forecasts.
    DiagBekkColumn,
    /// Variance-targeted diagonal BEKK per row vector.
    DiagBekkRow,
    /// Variance-targeted diagonal BEKK on the full vectorized series
    /// (dimension capped at 16).
    DiagBekkFull,
    /// Exponentially weighted moving average of outer products.
    RiskMetrics {
        /// Smoothing parameter (0.94 is the conventional daily value).
        lambda: f64,
    },
    /// Constant training-sample covariance.
    SampleCovariance,
}

impl BaselineModel {
    /// Stable identifier used in outputs.
    pub fn name(&self) -> &'static str {
        match self {
            BaselineModel::UnivariateGarch => "univariate-garch",
            BaselineModel::DiagBekkColumn => "bekk-column",
            BaselineModel::DiagBekkRow => "bekk-row",
            BaselineModel::DiagBekkFull => "bekk-full",
            BaselineModel::RiskMetrics { .. } => "riskmetrics",
            BaselineModel::SampleCovariance => "sample-cov",
        }
    }
}

fn sample_cov(series: &[DVector<f64>]) -> DMatrix<f64> {
    let d = series[0].len();
    let mut cov = DMatrix::zeros(d, d);
    for x in series {
        cov.gemm(1.0, x, &x.transpose(), 1.0);
    }
    cov / series.len() as f64
}

/// Variance-targeted diagonal BEKK:
/// `Σ_t = Σ̄ ∘ (11' − aa' − bb') + (aa') ∘ (x_{t-1} x_{t-1}') + (bb') ∘ Σ_{t-1}`
/// with `Σ_1 = Σ̄` and per-index constraint `a_i² + b_i² < 1`.
struct VtBekk {
    target: DMatrix<f64>,
    a: DVector<f64>,
    b: DVector<f64>,
}

impl VtBekk {
    fn sigma_path(&self, series: &[DVector<f64>]) -> Vec<DMatrix<f64>> {
        let d = self.target.nrows();
        let mut intercept = self.target.clone();
        for j in 0..d {
            for i in 0..d {
                intercept[(i, j)] *= 1.0 - self.a[i] * self.a[j] - self.b[i] * self.b[j];
            }
        }
        let mut out = Vec::with_capacity(series.len());
        let mut prev = self.target.clone();
        out.push(prev.clone());
        for t in 1..series.len() {
            let x = &series[t - 1];
            let mut s = intercept.clone();
            for j in 0..d {
                for i in 0..d {
                    s[(i, j)] += self.a[i] * self.a[j] * x[i] * x[j] + self.b[i] * self.b[j] * prev[(i, j)];
                }
            }
            out.push(s.clone());
            prev = s;
        }
        out
    }

    fn neg_loglik(&self, series: &[DVector<f64>]) -> f64 {
        let path = self.sigma_path(series);
        let mut acc = 0.0;
        for (s, x) in path.iter().zip(series) {
            match s.clone().cholesky() {
                Some(chol) => {
                    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
                    acc += logdet + x.dot(&chol.solve(x));
                }
                None => return crate::filter::PENALTY,
            }
        }
        let avg = acc / (2.0 * series.len() as f64);
        if avg.is_finite() {
            avg
        } else {
            crate::filter::PENALTY
        }
    }
}

/// radial tanh map of a coefficient pair onto the open unit disk
fn disk_to_natural(u: f64, v: f64) -> (f64, f64) {
    let r = (u * u + v * v).sqrt();
    let factor = if r < 1e-8 { 1.0 - r * r / 3.0 } else { r.tanh() / r };
    (factor * u, factor * v)
}

fn disk_to_unconstrained(a: f64, b: f64) -> (f64, f64) {
    let r = (a * a + b * b).sqrt();
    let factor = if r < 1e-8 { 1.0 + r * r / 3.0 } else { r.atanh() / r };
    (factor * a, factor * b)
}

fn fit_vt_bekk(train: &[DVector<f64>]) -> Result<VtBekk> {
    let d = train[0].len();
    if train.len() <= 2 * d {
        return Err(Error::InvalidData("training sample too short for the BEKK baseline".into()));
    }
    let target = sample_cov(train);
    let pack = |a: &DVector<f64>, b: &DVector<f64>| {
        let mut v = DVector::zeros(2 * d);
        for i in 0..d {
            let (u1, u2) = disk_to_unconstrained(a[i], b[i]);
            v[i] = u1;
            v[d + i] = u2;
        }
        v
    };
    let unpack = |v: &DVector<f64>| {
        let mut a = DVector::zeros(d);
        let mut b = DVector::zeros(d);
        for i in 0..d {
            let (ai, bi) = disk_to_natural(v[i], v[d + i]);
            a[i] = ai;
            b[i] = bi;
        }
        (a, b)
    };
    let obj = |v: &DVector<f64>| {
        let (a, b) = unpack(v);
        VtBekk { target: target.clone(), a, b }.neg_loglik(train)
    };
    let grad = |v: &DVector<f64>| {
        let mut g = DVector::zeros(2 * d);
        let mut probe = v.clone();
        for i in 0..2 * d {
            let h = (1e-7 * v[i].abs()).max(1e-5);
            probe[i] = v[i] + h;
            let fp = obj(&probe);
            probe[i] = v[i] - h;
            let fm = obj(&probe);
            probe[i] = v[i];
            g[i] = (fp - fm) / (2.0 * h);
        }
        g
    };
    let start = pack(
        &DVector::from_element(d, 0.25),
        &DVector::from_element(d, 0.9),
    );
    let out = minimize(obj, grad, start, &BfgsOptions { max_iter: 300, gtol: 1e-5 });
    if out.f >= crate::filter::PENALTY {
        return Err(Error::OptimizationFailed("BEKK baseline likelihood infeasible".into()));
    }
    let (a, b) = unpack(&out.x);
    Ok(VtBekk { target, a, b })
}

fn entry_variance_matrix(cov: &DMatrix<f64>, m: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, n, |i, j| cov[(j * m + i, j * m + i)])
}

/// One-step-ahead covariance forecasts of `vec(X_t)` on the test tail
/// (times `t_train..T`, 0-based) from a baseline model fitted on the
/// training segment. Per-entry or per-slice fit failures fall back to the
/// training covariance for the affected coordinates and are logged, not
/// fatal.
pub fn baseline_forecasts(
    panel: &MatrixPanel,
    model: BaselineModel,
    t_train: usize,
) -> Result<Vec<DMatrix<f64>>> {
    let (m, n) = panel.dims();
    let mn = m * n;
    let tlen = panel.len();
    if t_train == 0 || t_train >= tlen {
        return Err(Error::InvalidData(format!(
            "training split {t_train} out of range for T={tlen}"
        )));
    }
    let test_len = tlen - t_train;
    let vec_series: Vec<DVector<f64>> = (0..tlen).map(|t| panel.vec_at(t)).collect();
    let train_cov = sample_cov(&vec_series[..t_train]);

    match model {
        BaselineModel::SampleCovariance => Ok(vec![train_cov; test_len]),
        BaselineModel::RiskMetrics { lambda } => {
            if !(0.0..=1.0).contains(&lambda) {
                return Err(Error::InvalidParameter(format!("lambda {lambda} outside [0,1]")));
            }
            let mut sigma = train_cov.clone();
            let mut out = Vec::with_capacity(test_len);
            for t in 1..tlen {
                let x = &vec_series[t - 1];
                let mut next = DMatrix::zeros(mn, mn);
                next.gemm(1.0 - lambda, x, &x.transpose(), 0.0);
                next += &sigma * lambda;
                sigma = next;
                if t >= t_train {
                    out.push(sigma.clone());
                }
            }
            Ok(out)
        }
        BaselineModel::UnivariateGarch => {
            let mut out = vec![DMatrix::zeros(mn, mn); test_len];
            for j in 0..n {
                for i in 0..m {
                    let series = panel.entry_series(i, j)?;
                    let coord = j * m + i;
                    let forecasts = univariate_variances(&series, t_train);
                    match forecasts {
                        Ok(v) => {
                            for (k, var) in v.into_iter().enumerate() {
                                out[k][(coord, coord)] = var;
                            }
                        }
                        Err(e) => {
                            log::warn!("entry ({i},{j}) scalar GARCH fit failed ({e}); using the training variance");
                            for slot in out.iter_mut() {
                                slot[(coord, coord)] = train_cov[(coord, coord)];
                            }
                        }
                    }
                }
            }
            Ok(out)
        }
        BaselineModel::DiagBekkColumn | BaselineModel::DiagBekkRow | BaselineModel::DiagBekkFull => {
            // index sets of vec(X) covered by each independent slice fit
            let groups: Vec<Vec<usize>> = match model {
                BaselineModel::DiagBekkColumn => {
                    (0..n).map(|j| (0..m).map(|i| j * m + i).collect()).collect()
                }
                BaselineModel::DiagBekkRow => {
                    (0..m).map(|i| (0..n).map(|j| j * m + i).collect()).collect()
                }
                _ => {
                    if mn > 16 {
                        return Err(Error::InvalidData(format!(
                            "full diagonal BEKK supports vec dimensions up to 16, got {mn}"
                        )));
                    }
                    vec![(0..mn).collect()]
                }
            };
            let mut out = vec![DMatrix::zeros(mn, mn); test_len];
            for idx in &groups {
                let slice: Vec<DVector<f64>> = vec_series
                    .iter()
                    .map(|x| DVector::from_iterator(idx.len(), idx.iter().map(|&c| x[c])))
                    .collect();
                match fit_vt_bekk(&slice[..t_train]) {
                    Ok(bekk) => {
                        let path = bekk.sigma_path(&slice);
                        for (k, s) in path[t_train..].iter().enumerate() {
                            for (bi, &ci) in idx.iter().enumerate() {
                                for (bj, &cj) in idx.iter().enumerate() {
                                    out[k][(ci, cj)] = s[(bi, bj)];
                                }
                            }
                        }
                    }
                    Err(e) => {
                        log::warn!("BEKK slice fit failed ({e}); using the training covariance block");
                        for slot in out.iter_mut() {
                            for (bi, &ci) in idx.iter().enumerate() {
                                let _ = bi;
                                for &cj in idx.iter() {
                                    slot[(ci, cj)] = train_cov[(ci, cj)];
                                }
                            }
                        }
                    }
                }
            }
            Ok(out)
        }
    }
}

fn univariate_variances(series: &MatrixPanel, t_train: usize) -> Result<Vec<f64>> {
    let train = series.slice(0, t_train)?;
    let options = FitOptions {
        structure: Structure::Full,
        multistarts: 1,
        compute_sandwich: false,
        ..FitOptions::default()
    };
    let res = fit(&train, &options)?;
    let path = filter(series, &res.theta_hat)?;
    Ok(path.y[t_train..].to_vec())
}

/// One-step-ahead covariance forecasts from the matrix GARCH model itself:
/// fit on the training segment, filter the full series with fixed
/// parameters, emit `Σ_t = V_t ⊗ U_t` over the test tail.
pub fn matrix_garch_forecasts(
    panel: &MatrixPanel,
    t_train: usize,
    options: &FitOptions,
) -> Result<Vec<DMatrix<f64>>> {
    let tlen = panel.len();
    if t_train == 0 || t_train >= tlen {
        return Err(Error::InvalidData(format!(
            "training split {t_train} out of range for T={tlen}"
        )));
    }
    let train = panel.slice(0, t_train)?;
    let res = fit(&train, options)?;
    let path = filter(panel, &res.theta_hat)?;
    (t_train..tlen).map(|t| path.sigma(t)).collect()
}

/// One model's row in a forecast comparison.
#[derive(Debug, Clone)]
pub struct ComparisonRow {
    /// Model identifier.
    pub model: String,
    /// Aggregated losses.
    pub losses: EntryLosses,
    /// DM tests of this model against the matrix GARCH reference
    /// (per criterion), absent for the reference row itself.
    pub dm_mse: Option<DmTest>,
    /// DM test under MAE.
    pub dm_mae: Option<DmTest>,
    /// DM test under QLIKE (absent when either QLIKE is undefined).
    pub dm_qlike: Option<DmTest>,
}

/// Full forecast comparison: matrix GARCH reference plus baselines.
#[derive(Debug, Clone)]
pub struct ForecastComparison {
    /// Reference row first, baselines after.
    pub rows: Vec<ComparisonRow>,
    /// Split used.
    pub t_train: usize,
}

/// Run the out-of-sample comparison protocol on a (demeaned) panel.
pub fn forecast_comparison(
    panel: &MatrixPanel,
    t_train: usize,
    baselines: &[BaselineModel],
    options: &FitOptions,
) -> Result<ForecastComparison> {
    let (m, n) = panel.dims();
    let realized: Vec<DMatrix<f64>> = (t_train..panel.len()).map(|t| panel.get(t).clone()).collect();
    let to_entry_vars =
        |covs: &[DMatrix<f64>]| -> Vec<DMatrix<f64>> { covs.iter().map(|c| entry_variance_matrix(c, m, n)).collect() };

    let reference_covs = matrix_garch_forecasts(panel, t_train, options)?;
    let reference_vars = to_entry_vars(&reference_covs);
    let reference_series = loss_series(&reference_vars, &realized)?;
    let mut rows = vec![ComparisonRow {
        model: "matrix-garch".into(),
        losses: entry_losses(&reference_vars, &realized)?,
        dm_mse: None,
        dm_mae: None,
        dm_qlike: None,
    }];
    for model in baselines {
        let covs = baseline_forecasts(panel, *model, t_train)?;
        let vars = to_entry_vars(&covs);
        let series = loss_series(&vars, &realized)?;
        let dm_qlike = match (&series.qlike, &reference_series.qlike) {
            (Some(b), Some(a)) => Some(dm_test(b, a)?),
            _ => None,
        };
        rows.push(ComparisonRow {
            model: model.name().into(),
            losses: entry_losses(&vars, &realized)?,
            dm_mse: Some(dm_test(&series.mse, &reference_series.mse)?),
            dm_mae: Some(dm_test(&series.mae, &reference_series.mae)?),
            dm_qlike,
        });
    }
    Ok(ForecastComparison { rows, t_train })
}
