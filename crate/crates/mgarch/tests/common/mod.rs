//! Shared synthetic designs for the integration and verification suites.

use mgarch::{simulate, InnovationLaw, MatrixPanel, SideParams, Structure, Theta, TraceParams};
use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Balanced-strength 3×3 factor design: identity intercept roots so the
/// three factors carry comparable variance shares, scale `omega = 40` so the
/// common component dominates unit-variance idiosyncratic noise.
pub fn factor_design() -> Theta {
    Theta {
        trace: TraceParams { omega: 40.0, alpha: 0.3, beta: 0.6 },
        row: SideParams::diagonal(DMatrix::identity(3, 3), &[0.3; 3], &[0.6; 3]),
        col: SideParams::diagonal(DMatrix::identity(3, 3), &[0.3; 3], &[0.6; 3]),
        second: None,
    }
}

/// Haar-random orthonormal loadings.
pub fn random_orthonormal(d: usize, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut q = a.qr().q().columns(0, k).clone_owned();
    // deterministic column signs
    for j in 0..k {
        if q[(0, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Simulate `X_t = R F_t C' + E_t` with a 3×3 factor GARCH and i.i.d.
/// normal idiosyncratic noise. Returns the panel and the true loadings.
pub fn simulate_factor_panel(
    m: usize,
    n: usize,
    t_len: usize,
    noise_sd: f64,
    seed: u64,
) -> (MatrixPanel, DMatrix<f64>, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f00d);
    let r = random_orthonormal(m, 3, &mut rng);
    let c = random_orthonormal(n, 3, &mut rng);
    let factors = simulate(&factor_design(), t_len, 50, &InnovationLaw::MatrixNormal, seed).unwrap();
    let data: Vec<DMatrix<f64>> = (0..t_len)
        .map(|t| {
            &r * factors.get(t) * c.transpose()
                + DMatrix::from_fn(m, n, |_, _| noise_sd * rng.sample::<f64, _>(StandardNormal))
        })
        .collect();
    (MatrixPanel::new(data).unwrap(), r, c)
}

#[allow(dead_code)]
pub fn subspace_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a * a.transpose() - b * b.transpose()).norm()
}

// keep Structure referenced so the import list stays honest for all users
#[allow(dead_code)]
pub const DEFAULT_STRUCTURE: Structure = Structure::Diagonal;
