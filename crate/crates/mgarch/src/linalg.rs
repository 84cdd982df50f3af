//! Dense linear-algebra helpers.
//!
//! The public functions wrap nalgebra for symmetric matrix roots and
//! eigenvalues. The `small` submodule holds the allocation-free column-major
//! kernels used by the filtering recursion, which runs once per time step
//! inside the likelihood and cannot afford temporaries.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Eigenvalues of a symmetric matrix, sorted descending, with eigenvectors.
pub fn sym_eigen_sorted(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let se = a.clone().symmetric_eigen();
    let d = a.nrows();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| se.eigenvalues[j].partial_cmp(&se.eigenvalues[i]).unwrap());
    let vals = DVector::from_iterator(d, order.iter().map(|&i| se.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(d, d);
    for (k, &i) in order.iter().enumerate() {
        vecs.set_column(k, &se.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    a.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

fn check_symmetric(a: &DMatrix<f64>, what: &str) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{what}: expected square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let scale = a.amax().max(1e-300);
    for i in 0..a.nrows() {
        for j in 0..i {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-8 * scale {
                return Err(Error::InvalidParameter(format!(
                    "{what}: matrix not symmetric at ({i},{j})"
                )));
            }
        }
    }
    Ok(())
}

/// Symmetric positive-semidefinite square root via eigendecomposition.
///
/// Eigenvalues in `[-1e-8*scale, 0)` are clipped to zero; anything lower is
/// rejected as an invalid input.
pub fn sqrt_psd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_symmetric(a, "sqrt_psd")?;
    let (vals, vecs) = sym_eigen_sorted(a);
    let scale = vals.iter().cloned().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let mut root = DVector::zeros(vals.len());
    for i in 0..vals.len() {
        if vals[i] < -1e-8 * scale {
            return Err(Error::NotPositiveDefinite(format!(
                "sqrt_psd: eigenvalue {} below tolerance",
                vals[i]
            )));
        }
        root[i] = vals[i].max(0.0).sqrt();
    }
    let mut out = &vecs * DMatrix::from_diagonal(&root) * vecs.transpose();
    // enforce exact symmetry against rounding
    symmetrize(&mut out);
    Ok(out)
}

/// Symmetric inverse square root `A^{-1/2}` of a positive-definite matrix.
pub fn inv_sqrt_pd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_symmetric(a, "inv_sqrt_pd")?;
    let (vals, vecs) = sym_eigen_sorted(a);
    let scale = vals[0].max(1e-300);
    let mut root = DVector::zeros(vals.len());
    for i in 0..vals.len() {
        if vals[i] <= 1e-14 * scale {
            return Err(Error::NotPositiveDefinite(
                "inv_sqrt_pd: matrix numerically singular".into(),
            ));
        }
        root[i] = 1.0 / vals[i].sqrt();
    }
    let mut out = &vecs * DMatrix::from_diagonal(&root) * vecs.transpose();
    symmetrize(&mut out);
    Ok(out)
}

/// Replace `a` by `(a + a')/2`.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let d = a.nrows();
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Solve `A x = b` for symmetric positive-definite `A`.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("solve_spd: Cholesky failed".into()))?;
    Ok(chol.solve(b))
}

/// Column-major kernels on raw slices. All matrices are stored column-major
/// (nalgebra's layout) so `DMatrix::as_slice` feeds these directly.
pub(crate) mod small {
    /// c (m×n) = a (m×k) * b (k×n), overwriting c.
    pub fn mul_nn(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
        debug_assert_eq!(c.len(), m * n);
        for j in 0..n {
            let cj = &mut c[j * m..(j + 1) * m];
            cj.fill(0.0);
            for l in 0..k {
                let blj = b[j * k + l];
                if blj == 0.0 {
                    continue;
                }
                let al = &a[l * m..(l + 1) * m];
                for i in 0..m {
                    cj[i] += al[i] * blj;
                }
            }
        }
    }

    /// c (m×n) = a (m×k) * b' where b is n×k. If `acc`, accumulates into c.
    pub fn mul_nt(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize, acc: bool) {
        debug_assert_eq!(c.len(), m * n);
        if !acc {
            c.fill(0.0);
        }
        for l in 0..k {
            let al = &a[l * m..(l + 1) * m];
            let bl = &b[l * n..(l + 1) * n];
            for j in 0..n {
                let blj = bl[j];
                if blj == 0.0 {
                    continue;
                }
                let cj = &mut c[j * m..(j + 1) * m];
                for i in 0..m {
                    cj[i] += al[i] * blj;
                }
            }
        }
    }

    /// c (p×q) = a' * b where a is m×p and b is m×q.
    #[cfg_attr(not(test), allow(dead_code))]
    pub fn mul_tn(c: &mut [f64], a: &[f64], b: &[f64], m: usize, p: usize, q: usize) {
        debug_assert_eq!(c.len(), p * q);
        for j in 0..q {
            let bj = &b[j * m..(j + 1) * m];
            for i in 0..p {
                let ai = &a[i * m..(i + 1) * m];
                let mut s = 0.0;
                for l in 0..m {
                    s += ai[l] * bj[l];
                }
                c[j * p + i] = s;
            }
        }
    }

    /// c (d×d) += a * a' where a is d×k; writes the full symmetric result.
    pub fn syrk_acc(c: &mut [f64], a: &[f64], d: usize, k: usize) {
        for l in 0..k {
            let al = &a[l * d..(l + 1) * d];
            for j in 0..d {
                let alj = al[j];
                if alj == 0.0 {
                    continue;
                }
                let cj = &mut c[j * d..(j + 1) * d];
                for i in 0..d {
                    cj[i] += al[i] * alj;
                }
            }
        }
    }

    /// In-place lower Cholesky of a d×d matrix. Returns false when the
    /// matrix is not numerically positive definite. Only the lower triangle
    /// of the output is meaningful.
    pub fn chol_lower(a: &mut [f64], d: usize) -> bool {
        for j in 0..d {
            let mut s = a[j * d + j];
            for l in 0..j {
                let v = a[l * d + j];
                s -= v * v;
            }
            if !(s > 0.0) || !s.is_finite() {
                return false;
            }
            let ls = s.sqrt();
            a[j * d + j] = ls;
            for i in (j + 1)..d {
                let mut v = a[j * d + i];
                for l in 0..j {
                    v -= a[l * d + i] * a[l * d + j];
                }
                a[j * d + i] = v / ls;
            }
        }
        true
    }

    /// Solve L X = B in place for lower-triangular L (d×d) and B d×nrhs.
    pub fn solve_lower(l: &[f64], b: &mut [f64], d: usize, nrhs: usize) {
        for r in 0..nrhs {
            let br = &mut b[r * d..(r + 1) * d];
            for i in 0..d {
                let mut v = br[i];
                for k in 0..i {
                    v -= l[k * d + i] * br[k];
                }
                br[i] = v / l[i * d + i];
            }
        }
    }

    /// Solve L' X = B in place for lower-triangular L (d×d) and B d×nrhs.
    #[cfg_attr(not(test), allow(dead_code))]
    pub fn solve_lower_t(l: &[f64], b: &mut [f64], d: usize, nrhs: usize) {
        for r in 0..nrhs {
            let br = &mut b[r * d..(r + 1) * d];
            for ii in 0..d {
                let i = d - 1 - ii;
                let mut v = br[i];
                for k in (i + 1)..d {
                    v -= l[i * d + k] * br[k];
                }
                br[i] = v / l[i * d + i];
            }
        }
    }

    /// log(det) from a Cholesky factor: 2 * log(prod L_ii), falling back to
    /// the elementwise sum when the diagonal product leaves normal range.
    pub fn logdet_from_chol(l: &[f64], d: usize) -> f64 {
        let mut prod = 1.0;
        for i in 0..d {
            prod *= l[i * d + i];
        }
        if prod.is_normal() {
            return 2.0 * prod.ln();
        }
        let mut s = 0.0;
        for i in 0..d {
            s += l[i * d + i].ln();
        }
        2.0 * s
    }

    pub fn trace(a: &[f64], d: usize) -> f64 {
        let mut s = 0.0;
        for i in 0..d {
            s += a[i * d + i];
        }
        s
    }

    pub fn frob_sq(a: &[f64]) -> f64 {
        a.iter().map(|v| v * v).sum()
    }
}
