//! Innovation laws and data generation.
//!
//! Both laws are standardized so that `E[vec(Z)] = 0` and
//! `E[vec(Z) vec(Z)'] = I`, which the model's conditional-moment identities
//! rely on. The standardized matrix-t draw is a matrix normal scaled by an
//! independent inverse chi square mixing variable, rescaled by
//! `sqrt((nu-2)/nu)` so every entry has unit variance.

use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, StandardNormal};

use crate::error::{Error, Result};
use crate::filter::Recursion;
use crate::linalg::sqrt_psd;
use crate::panel::MatrixPanel;
use crate::params::Theta;

/// Innovation law for the i.i.d. matrix sequence `Z_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InnovationLaw {
    /// Standard matrix normal: i.i.d. N(0,1) entries.
    MatrixNormal,
    /// Standardized matrix t with the given degrees of freedom.
    ///
    /// Sampling requires `dof > 2` (finite variance); the portmanteau
    /// asymptotics additionally need finite fourth moments, i.e. `dof > 4`.
    StandardizedMatrixT {
        /// Degrees of freedom.
        dof: f64,
    },
}

impl InnovationLaw {
    /// Check that the law is well-defined for sampling.
    pub fn validate(&self) -> Result<()> {
        if let InnovationLaw::StandardizedMatrixT { dof } = self {
            if !(*dof > 2.0) {
                return Err(Error::InvalidParameter(format!(
                    "matrix-t degrees of freedom must exceed 2 for unit-variance standardization, got {dof}"
                )));
            }
        }
        Ok(())
    }
}

/// Draw one m×n innovation matrix.
pub fn draw_innovation<R: Rng + ?Sized>(
    law: &InnovationLaw,
    m: usize,
    n: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    law.validate()?;
    let mut z = DMatrix::from_fn(m, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    if let InnovationLaw::StandardizedMatrixT { dof } = law {
        let chi = ChiSquared::new(*dof).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let s = rng.sample(chi) / dof;
        z *= ((dof - 2.0) / dof / s).sqrt();
    }
    Ok(z)
}

/// Simulate a panel of length `t_len` from the model, discarding `burn_in`
/// initial observations. The recursion starts from zero initial values and
/// the draw is fully determined by `seed`.
///
/// A non-stationary parameter bundle is reported through `log::warn!` but
/// simulation still runs.
pub fn simulate(
    theta: &Theta,
    t_len: usize,
    burn_in: usize,
    law: &InnovationLaw,
    seed: u64,
) -> Result<MatrixPanel> {
    law.validate()?;
    theta.validate()?;
    if t_len == 0 {
        return Err(Error::InvalidData("requested panel length is zero".into()));
    }
    if !theta.is_stationary(1.0) {
        log::warn!("simulating from a non-stationary parameter bundle; the generated panel may explode");
    }
    let (m, n) = theta.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rec = Recursion::new(theta);
    let total = t_len + burn_in;
    let mut out = Vec::with_capacity(t_len);
    let mut x_prev: Option<DMatrix<f64>> = None;
    let mut x_prev2: Option<DMatrix<f64>> = None;
    for t in 0..total {
        rec.step(
            x_prev.as_ref().map(|x| x.as_slice()),
            x_prev2.as_ref().map(|x| x.as_slice()),
        );
        let s1 = DMatrix::from_column_slice(m, m, &rec.s1);
        let s2 = DMatrix::from_column_slice(n, n, &rec.s2);
        let tr1 = s1.trace();
        let tr2 = s2.trace();
        if !(tr1 > 0.0 && tr2 > 0.0 && rec.y > 0.0)
            || !tr1.is_finite()
            || !tr2.is_finite()
            || !rec.y.is_finite()
        {
            return Err(Error::Numerical(format!(
                "simulated state degenerated at step {t} (y = {}, tr S1 = {tr1:.3e})",
                rec.y
            )));
        }
        let u = &s1 * (rec.y / tr1);
        let v = &s2 / tr2;
        let u_root = sqrt_psd(&u)?;
        let v_root = sqrt_psd(&v)?;
        let z = draw_innovation(law, m, n, &mut rng)?;
        let x = &u_root * z * &v_root;
        if x.iter().any(|e| !e.is_finite()) {
            return Err(Error::Numerical(format!("simulated observation exploded at step {t}")));
        }
        x_prev2 = x_prev.take();
        x_prev = Some(x.clone());
        if t >= burn_in {
            out.push(x);
        }
    }
    MatrixPanel::new(out)
}
