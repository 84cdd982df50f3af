//! Dense BFGS minimizer with Armijo backtracking.
//!
//! The objective may return a large finite penalty on infeasible points
//! (the likelihood does this for numerically singular states); the line
//! search simply backtracks away from such regions.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub(crate) struct BfgsOptions {
    pub max_iter: usize,
    /// Infinity-norm gradient target.
    pub gtol: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct BfgsOutcome {
    pub x: DVector<f64>,
    pub f: f64,
    pub grad_inf: f64,
    pub iterations: usize,
    /// Objective decrease achieved by the final accepted step.
    pub last_decrease: f64,
    /// False when the start was infeasible or the search stalled before
    /// reaching the gradient target.
    pub reached_gtol: bool,
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 50;

pub(crate) fn minimize<F, G>(
    mut f: F,
    mut grad: G,
    x0: DVector<f64>,
    opts: &BfgsOptions,
) -> BfgsOutcome
where
    F: FnMut(&DVector<f64>) -> f64,
    G: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let p = x0.len();
    let mut x = x0;
    let mut fx = f(&x);

    let mut g = grad(&x);
    let mut h = DMatrix::<f64>::identity(p, p);
    let mut last_decrease = f64::INFINITY;
    let mut stalls = 0usize;
    let mut iterations = 0;
    let mut first_update = true;

    if fx >= crate::filter::PENALTY {
        return BfgsOutcome {
            grad_inf: g.amax(),
            x,
            f: fx,
            iterations: 0,
            last_decrease: 0.0,
            reached_gtol: false,

        };
    }

    while iterations < opts.max_iter {
        let grad_inf = g.amax();
        if grad_inf < opts.gtol {
            return BfgsOutcome {
                x,
                f: fx,
                grad_inf,
                iterations,
                last_decrease: if last_decrease.is_finite() { last_decrease } else { 0.0 },
                reached_gtol: true,
        
            };
        }
        iterations += 1;

        let mut dir = -(&h * &g);
        let mut slope = dir.dot(&g);
        if !(slope < 0.0) {
            // damaged curvature estimate: restart from steepest descent
            h = DMatrix::identity(p, p);
            dir = -g.clone();
            slope = dir.dot(&g);
        }

        // Armijo backtracking
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let x_new = &x + &dir * step;
            let f_new = f(&x_new);

            if f_new <= fx + ARMIJO_C1 * step * slope && f_new.is_finite() {
                accepted = Some((x_new, f_new));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            // no acceptable step along the search direction
            break;
        };

        let g_new = grad(&x_new);
        let s = &x_new - &x;
        let yv = &g_new - &g;
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() {
            if first_update {
                // scale the initial inverse Hessian to the first curvature
                let gamma = sy / yv.dot(&yv);
                if gamma.is_finite() && gamma > 0.0 {
                    h = DMatrix::identity(p, p) * gamma;
                }
                first_update = false;
            }
            let rho = 1.0 / sy;
            let hy = &h * &yv;
            let yhy = yv.dot(&hy);
            // H <- H - rho (H y s' + s y' H) + rho^2 s (y' H y) s' + rho s s'
            for i in 0..p {
                for j in 0..p {
                    h[(i, j)] += -rho * (hy[i] * s[j] + s[i] * hy[j])
                        + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }

        last_decrease = fx - f_new;
        x = x_new;
        fx = f_new;
        g = g_new;

        if last_decrease < 1e-13 * (1.0 + fx.abs()) {
            stalls += 1;
            if stalls >= 2 {
                break;
            }
        } else {
            stalls = 0;
        }
    }

    let grad_inf = g.amax();
    BfgsOutcome {
        reached_gtol: grad_inf < opts.gtol,
        x,
        f: fx,
        grad_inf,
        iterations,
        last_decrease: if last_decrease.is_finite() { last_decrease } else { 0.0 },

    }
}
