//! Model parameters, their packing into real vectors, and the smooth
//! transform between unconstrained optimizer coordinates and the
//! constrained parameter set.
//!
//! Two coordinate systems coexist:
//!
//! * natural coordinates ([`pack_natural`] / [`unpack_natural`]): the model
//!   parameters laid out as `[trace | row side | col side]`, a bit-exact
//!   bijection used for reporting, standard errors and finite differences
//!   around an interior point;
//! * unconstrained coordinates ([`Transform`]): a smooth bijection from
//!   `R^p` onto the constrained set (positivity of the scale parameters,
//!   optional stationarity box), used by the optimizer.
//!
//! The packed vector excludes the (1,1) entries of the two intercept roots,
//! which are structurally pinned to 1.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Shape restriction on the ARCH/GARCH coefficient matrices of one side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Structure {
    /// Unrestricted square coefficient matrices.
    Full,
    /// Diagonal coefficient matrices (the intercept root stays full
    /// lower-triangular).
    Diagonal,
}

/// Scalar GARCH parameters driving the trace process `y_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceParams {
    /// Intercept `w > 0`.
    pub omega: f64,
    /// Coefficient on the lagged squared Frobenius norm of the observation.
    pub alpha: f64,
    /// Coefficient on the lagged trace `y_{t-1}`.
    pub beta: f64,
}

/// BEKK-style parameters of one side (rows or columns).
#[derive(Debug, Clone, PartialEq)]
pub struct SideParams {
    /// Lower-triangular root of the intercept; its (1,1) entry is pinned
    /// to 1 and its diagonal is nonnegative.
    pub intercept_root: DMatrix<f64>,
    /// First-lag ARCH coefficient matrix.
    pub arch: DMatrix<f64>,
    /// First-lag GARCH coefficient matrix.
    pub garch: DMatrix<f64>,
    /// Shape restriction on `arch`/`garch`.
    pub structure: Structure,
}

impl SideParams {
    /// Side dimension (m for the row side, n for the column side).
    pub fn dim(&self) -> usize {
        self.intercept_root.nrows()
    }

    /// Diagonal side parameters with the given matrices.
    pub fn diagonal(intercept_root: DMatrix<f64>, arch_diag: &[f64], garch_diag: &[f64]) -> Self {
        let d = intercept_root.nrows();
        SideParams {
            intercept_root,
            arch: DMatrix::from_diagonal(&DVector::from_column_slice(arch_diag)),
            garch: DMatrix::from_diagonal(&DVector::from_column_slice(garch_diag)),
            structure: Structure::Diagonal,
        }
        .assert_dim(d)
    }

    fn assert_dim(self, d: usize) -> Self {
        debug_assert_eq!(self.arch.nrows(), d);
        self
    }
}

/// Second-lag parameters extending the recursions to order (2,2).
#[derive(Debug, Clone, PartialEq)]
pub struct SecondOrderParams {
    /// Second-lag coefficient on the squared norm in the trace recursion.
    pub trace_arch: f64,
    /// Second-lag coefficient on `y_{t-2}`.
    pub trace_garch: f64,
    /// Second-lag ARCH matrix, row side.
    pub row_arch: DMatrix<f64>,
    /// Second-lag GARCH matrix, row side.
    pub row_garch: DMatrix<f64>,
    /// Second-lag ARCH matrix, column side.
    pub col_arch: DMatrix<f64>,
    /// Second-lag GARCH matrix, column side.
    pub col_garch: DMatrix<f64>,
}

impl SecondOrderParams {
    /// All-zero second-lag block (order (2,2) coinciding with order (1,1)).
    pub fn zeros(m: usize, n: usize) -> Self {
        SecondOrderParams {
            trace_arch: 0.0,
            trace_garch: 0.0,
            row_arch: DMatrix::zeros(m, m),
            row_garch: DMatrix::zeros(m, m),
            col_arch: DMatrix::zeros(n, n),
            col_garch: DMatrix::zeros(n, n),
        }
    }
}

/// Full parameter bundle of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    /// Trace process parameters.
    pub trace: TraceParams,
    /// Row-side parameters (dimension m).
    pub row: SideParams,
    /// Column-side parameters (dimension n).
    pub col: SideParams,
    /// Present when the recursions have order (2,2).
    pub second: Option<SecondOrderParams>,
}

impl Theta {
    /// (m, n) dimensions implied by the side parameters.
    pub fn dims(&self) -> (usize, usize) {
        (self.row.dim(), self.col.dim())
    }

    /// True when the bundle carries second-lag parameters.
    pub fn is_second_order(&self) -> bool {
        self.second.is_some()
    }

    /// Layout descriptor for packing.
    pub fn layout(&self) -> ThetaLayout {
        ThetaLayout {
            m: self.row.dim(),
            n: self.col.dim(),
            row_structure: self.row.structure,
            col_structure: self.col.structure,
            second_order: self.second.is_some(),
        }
    }

    /// Check the structural invariants: finiteness, positive `omega`,
    /// nonnegative ARCH/GARCH scalars, lower-triangular intercept roots with
    /// nonnegative diagonal and unit (1,1) entry, and exact structural zeros
    /// under the diagonal restriction.
    pub fn validate(&self) -> Result<()> {
        let t = &self.trace;
        if !t.omega.is_finite() || !t.alpha.is_finite() || !t.beta.is_finite() {
            return Err(Error::InvalidParameter("non-finite trace parameter".into()));
        }
        if t.omega <= 0.0 {
            return Err(Error::InvalidParameter(format!("omega must be positive, got {}", t.omega)));
        }
        if t.alpha < 0.0 || t.beta < 0.0 {
            return Err(Error::InvalidParameter("alpha and beta must be nonnegative".into()));
        }
        validate_side(&self.row, "row")?;
        validate_side(&self.col, "col")?;
        if let Some(s) = &self.second {
            if s.trace_arch < 0.0 || s.trace_garch < 0.0 {
                return Err(Error::InvalidParameter(
                    "second-lag trace coefficients must be nonnegative".into(),
                ));
            }
            for (mat, d, name) in [
                (&s.row_arch, self.row.dim(), "second-lag row arch"),
                (&s.row_garch, self.row.dim(), "second-lag row garch"),
                (&s.col_arch, self.col.dim(), "second-lag col arch"),
                (&s.col_garch, self.col.dim(), "second-lag col garch"),
            ] {
                if mat.nrows() != d || mat.ncols() != d {
                    return Err(Error::DimensionMismatch(format!("{name} must be {d}x{d}")));
                }
                if mat.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidParameter(format!("{name} has a non-finite entry")));
                }
            }
            let struct_pairs = [
                (&s.row_arch, self.row.structure),
                (&s.row_garch, self.row.structure),
                (&s.col_arch, self.col.structure),
                (&s.col_garch, self.col.structure),
            ];
            for (mat, st) in struct_pairs {
                if st == Structure::Diagonal && !is_diagonal(mat) {
                    return Err(Error::InvalidParameter(
                        "second-lag matrix has off-diagonal entries under the diagonal structure".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Persistence and spectral-radius stationarity check against `rho_bar`.
    pub fn is_stationary(&self, rho_bar: f64) -> bool {
        let mut persist = self.trace.alpha + self.trace.beta;
        if let Some(s) = &self.second {
            persist += s.trace_arch + s.trace_garch;
        }
        if persist > rho_bar {
            return false;
        }
        let row_mats: Vec<&DMatrix<f64>> = match &self.second {
            Some(s) => vec![&self.row.arch, &self.row.garch, &s.row_arch, &s.row_garch],
            None => vec![&self.row.arch, &self.row.garch],
        };
        let col_mats: Vec<&DMatrix<f64>> = match &self.second {
            Some(s) => vec![&self.col.arch, &self.col.garch, &s.col_arch, &s.col_garch],
            None => vec![&self.col.arch, &self.col.garch],
        };
        kron_spectral_radius(&row_mats) <= rho_bar && kron_spectral_radius(&col_mats) <= rho_bar
    }

    /// Flip the sign of any ARCH/GARCH coefficient matrix whose leading
    /// entry is negative. The likelihood only depends on these matrices
    /// through quadratic forms, so the flip is a symmetry; reporting the
    /// representative with nonnegative (1,1) entry makes estimates
    /// comparable across replications.
    pub fn canonicalize_signs(&mut self) {
        for mat in [&mut self.row.arch, &mut self.row.garch, &mut self.col.arch, &mut self.col.garch] {
            flip_if_leading_negative(mat);
        }
        if let Some(s) = &mut self.second {
            for mat in [&mut s.row_arch, &mut s.row_garch, &mut s.col_arch, &mut s.col_garch] {
                flip_if_leading_negative(mat);
            }
        }
    }
}

fn flip_if_leading_negative(mat: &mut DMatrix<f64>) {
    // first nonzero entry in column-major order decides the sign
    let lead = mat.as_slice().iter().find(|v| **v != 0.0).copied().unwrap_or(0.0);
    if lead < 0.0 {
        mat.neg_mut();
    }
}

fn is_diagonal(mat: &DMatrix<f64>) -> bool {
    for j in 0..mat.ncols() {
        for i in 0..mat.nrows() {
            if i != j && mat[(i, j)] != 0.0 {
                return false;
            }
        }
    }
    true
}

fn validate_side(side: &SideParams, name: &str) -> Result<()> {
    let d = side.dim();
    for (mat, what) in [
        (&side.intercept_root, "intercept root"),
        (&side.arch, "arch"),
        (&side.garch, "garch"),
    ] {
        if mat.nrows() != d || mat.ncols() != d {
            return Err(Error::DimensionMismatch(format!("{name} {what} must be {d}x{d}")));
        }
        if mat.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("{name} {what} has a non-finite entry")));
        }
    }
    let a0 = &side.intercept_root;
    if (a0[(0, 0)] - 1.0).abs() != 0.0 {
        return Err(Error::InvalidParameter(format!(
            "{name} intercept root must have unit (1,1) entry, got {}",
            a0[(0, 0)]
        )));
    }
    for j in 0..d {
        if a0[(j, j)] < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "{name} intercept root has negative diagonal entry at {}",
                j + 1
            )));
        }
        for i in 0..j {
            if a0[(i, j)] != 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "{name} intercept root must be lower triangular"
                )));
            }
        }
    }
    if side.structure == Structure::Diagonal && (!is_diagonal(&side.arch) || !is_diagonal(&side.garch)) {
        return Err(Error::InvalidParameter(format!(
            "{name} arch/garch must be diagonal under the diagonal structure"
        )));
    }
    Ok(())
}

/// Spectral radius of `sum_k A_k ⊗ A_k`.
fn kron_spectral_radius(mats: &[&DMatrix<f64>]) -> f64 {
    let d = mats[0].nrows();
    let mut sum = DMatrix::zeros(d * d, d * d);
    for a in mats {
        sum += a.kronecker(a);
    }
    sum.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Packing layout: dimensions, structures and recursion order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThetaLayout {
    /// Row dimension m.
    pub m: usize,
    /// Column dimension n.
    pub n: usize,
    /// Row-side structure.
    pub row_structure: Structure,
    /// Column-side structure.
    pub col_structure: Structure,
    /// True for order-(2,2) recursions.
    pub second_order: bool,
}

impl ThetaLayout {
    /// Order-(1,1) layout with a common structure on both sides.
    pub fn order1(m: usize, n: usize, structure: Structure) -> Self {
        ThetaLayout { m, n, row_structure: structure, col_structure: structure, second_order: false }
    }

    fn coeff_len(d: usize, structure: Structure) -> usize {
        match structure {
            Structure::Full => d * d,
            Structure::Diagonal => d,
        }
    }

    fn side_len(d: usize, structure: Structure, second_order: bool) -> usize {
        let lags = if second_order { 4 } else { 2 };
        d * (d + 1) / 2 - 1 + lags * Self::coeff_len(d, structure)
    }

    /// Number of packed trace parameters (3, or 5 at order (2,2)).
    pub fn trace_len(&self) -> usize {
        if self.second_order {
            5
        } else {
            3
        }
    }

    /// Number of packed row-side parameters.
    pub fn row_len(&self) -> usize {
        Self::side_len(self.m, self.row_structure, self.second_order)
    }

    /// Number of packed column-side parameters.
    pub fn col_len(&self) -> usize {
        Self::side_len(self.n, self.col_structure, self.second_order)
    }

    /// Total free-parameter count `p`.
    pub fn param_count(&self) -> usize {
        self.trace_len() + self.row_len() + self.col_len()
    }

    /// Human-readable parameter names in packing order (1-based indices).
    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec!["omega".to_string(), "alpha".to_string(), "beta".to_string()];
        if self.second_order {
            names = vec![
                "omega".to_string(),
                "alpha1".to_string(),
                "beta1".to_string(),
                "alpha2".to_string(),
                "beta2".to_string(),
            ];
        }
        let side_names = |d: usize, structure: Structure, labels: [&str; 5], out: &mut Vec<String>| {
            for j in 0..d {
                for i in j..d {
                    if i == 0 && j == 0 {
                        continue;
                    }
                    out.push(format!("{}[{},{}]", labels[0], i + 1, j + 1));
                }
            }
            let n_lags = if self.second_order { 4 } else { 2 };
            for lag in 0..n_lags {
                let label = labels[1 + lag];
                match structure {
                    Structure::Full => {
                        for j in 0..d {
                            for i in 0..d {
                                out.push(format!("{}[{},{}]", label, i + 1, j + 1));
                            }
                        }
                    }
                    Structure::Diagonal => {
                        for i in 0..d {
                            out.push(format!("{}[{},{}]", label, i + 1, i + 1));
                        }
                    }
                }
            }
        };
        side_names(self.m, self.row_structure, ["A0", "A1", "A2", "A3", "A4"], &mut names);
        side_names(self.n, self.col_structure, ["B0", "B1", "B2", "B3", "B4"], &mut names);
        names
    }
}

fn push_side(side: &SideParams, second: Option<(&DMatrix<f64>, &DMatrix<f64>)>, out: &mut Vec<f64>) {
    let d = side.dim();
    for j in 0..d {
        for i in j..d {
            if i == 0 && j == 0 {
                continue;
            }
            out.push(side.intercept_root[(i, j)]);
        }
    }
    let mut mats: Vec<&DMatrix<f64>> = vec![&side.arch, &side.garch];
    if let Some((a2, g2)) = second {
        mats.push(a2);
        mats.push(g2);
    }
    for mat in mats {
        match side.structure {
            Structure::Full => out.extend_from_slice(mat.as_slice()),
            Structure::Diagonal => {
                for i in 0..d {
                    out.push(mat[(i, i)]);
                }
            }
        }
    }
}

/// Pack a parameter bundle into natural coordinates.
pub fn pack_natural(theta: &Theta) -> DVector<f64> {
    let mut out = Vec::with_capacity(theta.layout().param_count());
    out.push(theta.trace.omega);
    out.push(theta.trace.alpha);
    out.push(theta.trace.beta);
    if let Some(s) = &theta.second {
        out.push(s.trace_arch);
        out.push(s.trace_garch);
    }
    let second_row = theta.second.as_ref().map(|s| (&s.row_arch, &s.row_garch));
    let second_col = theta.second.as_ref().map(|s| (&s.col_arch, &s.col_garch));
    push_side(&theta.row, second_row, &mut out);
    push_side(&theta.col, second_col, &mut out);
    DVector::from_vec(out)
}

struct Reader<'a> {
    v: &'a [f64],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn next(&mut self) -> f64 {
        let x = self.v[self.pos];
        self.pos += 1;
        x
    }
}

fn read_side(
    r: &mut Reader,
    d: usize,
    structure: Structure,
    second_order: bool,
) -> (SideParams, Option<(DMatrix<f64>, DMatrix<f64>)>) {
    let mut a0 = DMatrix::zeros(d, d);
    a0[(0, 0)] = 1.0;
    for j in 0..d {
        for i in j..d {
            if i == 0 && j == 0 {
                continue;
            }
            a0[(i, j)] = r.next();
        }
    }
    let mut read_mat = || match structure {
        Structure::Full => {
            let mut m = DMatrix::zeros(d, d);
            for v in m.as_mut_slice().iter_mut() {
                *v = r.next();
            }
            m
        }
        Structure::Diagonal => {
            let mut m = DMatrix::zeros(d, d);
            for i in 0..d {
                m[(i, i)] = r.next();
            }
            m
        }
    };
    let arch = read_mat();
    let garch = read_mat();
    let second = if second_order { Some((read_mat(), read_mat())) } else { None };
    (SideParams { intercept_root: a0, arch, garch, structure }, second)
}

/// Rebuild a parameter bundle from natural coordinates.
///
/// Only length and finiteness are checked here; value-level invariants are
/// the business of [`Theta::validate`], so finite-difference probes around
/// an interior point stay representable.
pub fn unpack_natural(v: &DVector<f64>, layout: &ThetaLayout) -> Result<Theta> {
    if v.len() != layout.param_count() {
        return Err(Error::DimensionMismatch(format!(
            "packed vector has length {}, layout expects {}",
            v.len(),
            layout.param_count()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("packed vector has a non-finite entry".into()));
    }
    let mut r = Reader { v: v.as_slice(), pos: 0 };
    let omega = r.next();
    let alpha = r.next();
    let beta = r.next();
    let trace2 = if layout.second_order { Some((r.next(), r.next())) } else { None };
    let (row, row2) = read_side(&mut r, layout.m, layout.row_structure, layout.second_order);
    let (col, col2) = read_side(&mut r, layout.n, layout.col_structure, layout.second_order);
    let second = trace2.map(|(ta, tg)| {
        let (ra, rg) = row2.unwrap();
        let (ca, cg) = col2.unwrap();
        SecondOrderParams {
            trace_arch: ta,
            trace_garch: tg,
            row_arch: ra,
            row_garch: rg,
            col_arch: ca,
            col_garch: cg,
        }
    });
    Ok(Theta { trace: TraceParams { omega, alpha, beta }, row, col, second })
}

/// Smooth bijection between unconstrained optimizer coordinates and the
/// constrained parameter set.
///
/// With stationarity enforcement on (the default), the trace coefficients
/// are mapped through a multinomial logit onto the open simplex scaled by
/// `rho_bar`, and under the diagonal structure each index's ARCH/GARCH
/// coefficient pair is mapped onto the disk of radius `sqrt(rho_bar)`
/// through a radial tanh map, which bounds the spectral radius of
/// `A1⊗A1 + A2⊗A2`. Full coefficient matrices stay unconstrained. Positivity
/// of `omega` and of the intercept-root diagonals always goes through `exp`.
#[derive(Debug, Clone)]
pub struct Transform {
    /// Packing layout.
    pub layout: ThetaLayout,
    /// Stationarity bound (default 0.999).
    pub rho_bar: f64,
    /// When false, only positivity constraints are enforced.
    pub enforce_stationarity: bool,
}

impl Transform {
    /// Default transform for a layout: `rho_bar = 0.999`, enforcement on.
    pub fn new(layout: ThetaLayout) -> Self {
        Transform { layout, rho_bar: 0.999, enforce_stationarity: true }
    }

    /// Map a constrained bundle to unconstrained coordinates.
    ///
    /// Fails when the bundle sits on (or outside) the constraint boundary,
    /// where the transform has no finite preimage.
    pub fn pack(&self, theta: &Theta) -> Result<DVector<f64>> {
        let natural = pack_natural(theta);
        if theta.layout() != self.layout {
            return Err(Error::DimensionMismatch("theta layout does not match transform".into()));
        }
        let mut out = natural.clone();
        self.apply(&natural, &mut out, Direction::ToUnconstrained)?;
        Ok(out)
    }

    /// Map unconstrained coordinates to a constrained bundle.
    pub fn unpack(&self, v: &DVector<f64>) -> Result<Theta> {
        if v.len() != self.layout.param_count() {
            return Err(Error::DimensionMismatch(format!(
                "unconstrained vector has length {}, layout expects {}",
                v.len(),
                self.layout.param_count()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("unconstrained vector has a non-finite entry".into()));
        }
        let mut natural = v.clone();
        self.apply(v, &mut natural, Direction::ToNatural)?;
        unpack_natural(&natural, &self.layout)
    }

    fn apply(&self, src: &DVector<f64>, dst: &mut DVector<f64>, dir: Direction) -> Result<()> {
        // trace block
        map_exp(src[0], &mut dst[0], dir, "omega")?;
        let n_coeff = if self.layout.second_order { 4 } else { 2 };
        if self.enforce_stationarity {
            map_simplex(src.as_slice(), dst.as_mut_slice(), 1, n_coeff, self.rho_bar, dir)?;
        } else {
            for i in 1..=n_coeff {
                map_exp(src[i], &mut dst[i], dir, "trace coefficient")?;
            }
        }
        let mut pos = 1 + n_coeff;
        pos = self.apply_side(src, dst, pos, self.layout.m, self.layout.row_structure, dir)?;
        self.apply_side(src, dst, pos, self.layout.n, self.layout.col_structure, dir)?;
        Ok(())
    }

    fn apply_side(
        &self,
        src: &DVector<f64>,
        dst: &mut DVector<f64>,
        mut pos: usize,
        d: usize,
        structure: Structure,
        dir: Direction,
    ) -> Result<usize> {
        // intercept root: diagonal entries through exp, off-diagonals identity
        for j in 0..d {
            for i in j..d {
                if i == 0 && j == 0 {
                    continue;
                }
                if i == j {
                    map_exp(src[pos], &mut dst[pos], dir, "intercept-root diagonal")?;
                }
                pos += 1;
            }
        }
        let n_lags = if self.layout.second_order { 4 } else { 2 };
        let coeff_len = ThetaLayout::coeff_len(d, structure);
        if structure == Structure::Diagonal && self.enforce_stationarity {
            // couple the per-index coefficients across lags onto a ball of
            // radius sqrt(rho_bar)
            for i in 0..d {
                let idx: Vec<usize> = (0..n_lags).map(|lag| pos + lag * coeff_len + i).collect();
                map_ball(src, dst, &idx, self.rho_bar.sqrt(), dir)?;
            }
        }
        // full matrices (or diagonal without enforcement) are identity-mapped
        Ok(pos + n_lags * coeff_len)
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Direction {
    ToUnconstrained,
    ToNatural,
}

fn map_exp(src: f64, dst: &mut f64, dir: Direction, what: &str) -> Result<()> {
    match dir {
        Direction::ToNatural => {
            *dst = src.exp();
            Ok(())
        }
        Direction::ToUnconstrained => {
            if src <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "{what} = {src} is on the positivity boundary; no unconstrained preimage"
                )));
            }
            *dst = src.ln();
            Ok(())
        }
    }
}

/// Multinomial-logit bijection between R^k and the open simplex
/// `{x_i > 0, sum x_i < rho_bar}`.
fn map_simplex(src: &[f64], dst: &mut [f64], start: usize, k: usize, rho_bar: f64, dir: Direction) -> Result<()> {
    match dir {
        Direction::ToNatural => {
            let mx = src[start..start + k].iter().cloned().fold(0.0f64, f64::max);
            let exps: Vec<f64> = src[start..start + k].iter().map(|u| (u - mx).exp()).collect();
            let denom = (-mx).exp() + exps.iter().sum::<f64>();
            for i in 0..k {
                dst[start + i] = rho_bar * exps[i] / denom;
            }
            Ok(())
        }
        Direction::ToUnconstrained => {
            let sum: f64 = src[start..start + k].iter().sum();
            let slack = 1.0 - sum / rho_bar;
            if slack <= 0.0 || src[start..start + k].iter().any(|x| *x <= 0.0) {
                return Err(Error::InvalidParameter(
                    "trace coefficients on the stationarity boundary; no unconstrained preimage".into(),
                ));
            }
            for i in 0..k {
                dst[start + i] = (src[start + i] / rho_bar).ln() - slack.ln();
            }
            Ok(())
        }
    }
}

/// Radial tanh bijection between R^k and the open ball of the given radius,
/// applied to the coordinates at `idx`.
fn map_ball(src: &DVector<f64>, dst: &mut DVector<f64>, idx: &[usize], radius: f64, dir: Direction) -> Result<()> {
    let r: f64 = idx.iter().map(|&i| src[i] * src[i]).sum::<f64>().sqrt();
    match dir {
        Direction::ToNatural => {
            // tanh(r)/r is smooth at 0 (series 1 - r^2/3 + ...)
            let factor = if r < 1e-8 { 1.0 - r * r / 3.0 } else { r.tanh() / r };
            for &i in idx {
                dst[i] = radius * factor * src[i];
            }
            Ok(())
        }
        Direction::ToUnconstrained => {
            let rho = r / radius;
            if rho >= 1.0 {
                return Err(Error::InvalidParameter(
                    "coefficient pair on the spectral-radius boundary; no unconstrained preimage".into(),
                ));
            }
            let factor = if rho < 1e-8 { (1.0 + rho * rho / 3.0) / radius } else { rho.atanh() / (rho * radius) };
            for &i in idx {
                dst[i] = factor * src[i];
            }
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn theta_3x3_diag() -> Theta {
        let a0 = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.4, 0.4, 0.0, 0.4, 0.4, 0.4]);
        Theta {
            trace: TraceParams { omega: 0.4, alpha: 0.3, beta: 0.6 },
            row: SideParams::diagonal(a0.clone(), &[0.3, 0.3, 0.3], &[0.6, 0.6, 0.6]),
            col: SideParams::diagonal(a0, &[0.3, 0.3, 0.3], &[0.6, 0.6, 0.6]),
            second: None,
        }
    }

    #[test]
    fn param_counts_match_the_formula() {
        // p_delta = 2 m^2 + m(m+1)/2 - 1 for the full structure
        assert_eq!(ThetaLayout::order1(1, 1, Structure::Full).param_count(), 7);
        assert_eq!(ThetaLayout::order1(3, 3, Structure::Full).param_count(), 49);
        // diagonal analogue: 2m + m(m+1)/2 - 1
        assert_eq!(ThetaLayout::order1(3, 3, Structure::Diagonal).param_count(), 25);
        assert_eq!(ThetaLayout::order1(2, 4, Structure::Diagonal).param_count(), 3 + 6 + 17);
    }

    #[test]
    fn natural_roundtrip_is_exact() {
        let theta = theta_3x3_diag();
        let v = pack_natural(&theta);
        assert_eq!(v.len(), 25);
        let back = unpack_natural(&v, &theta.layout()).unwrap();
        assert_eq!(back, theta);
    }

    #[test]
    fn natural_roundtrip_second_order() {
        let mut theta = theta_3x3_diag();
        let mut s = SecondOrderParams::zeros(3, 3);
        s.trace_arch = 0.05;
        s.row_arch[(1, 1)] = 0.2;
        s.col_garch[(2, 2)] = -0.1;
        theta.second = Some(s);
        let layout = theta.layout();
        assert_eq!(layout.param_count(), 5 + (5 + 12) + (5 + 12));
        let v = pack_natural(&theta);
        let back = unpack_natural(&v, &layout).unwrap();
        assert_eq!(back, theta);
    }

    #[test]
    fn transform_roundtrip_and_constraints() {
        let theta = theta_3x3_diag();
        let tf = Transform::new(theta.layout());
        let u = tf.pack(&theta).unwrap();
        let back = tf.unpack(&u).unwrap();
        let v0 = pack_natural(&theta);
        let v1 = pack_natural(&back);
        for i in 0..v0.len() {
            assert!((v0[i] - v1[i]).abs() <= 1e-12 * (1.0 + v0[i].abs()), "coordinate {i}");
        }
    }

    #[test]
    fn transform_rejects_boundary_theta() {
        let mut theta = theta_3x3_diag();
        theta.trace.alpha = 0.0;
        let tf = Transform::new(theta.layout());
        assert!(tf.pack(&theta).is_err());
    }

    #[test]
    fn unpack_rejects_bad_input() {
        let layout = ThetaLayout::order1(2, 2, Structure::Diagonal);
        let tf = Transform::new(layout);
        assert!(tf.unpack(&DVector::zeros(3)).is_err());
        let mut v = DVector::zeros(layout.param_count());
        v[0] = f64::NAN;
        assert!(tf.unpack(&v).is_err());
        assert!(unpack_natural(&v, &layout).is_err());
    }

    #[test]
    fn canonicalize_flips_leading_sign() {
        let mut theta = theta_3x3_diag();
        theta.row.arch.neg_mut();
        let flipped = theta.row.arch.clone();
        theta.canonicalize_signs();
        assert_eq!(theta.row.arch, -flipped);
        assert!(theta.row.arch[(0, 0)] >= 0.0);
    }

    #[test]
    fn names_align_with_packing() {
        let layout = ThetaLayout::order1(3, 3, Structure::Diagonal);
        let names = layout.param_names();
        assert_eq!(names.len(), layout.param_count());
        assert_eq!(names[0], "omega");
        assert_eq!(names[3], "A0[2,1]");
        assert_eq!(names[8], "A1[1,1]");
        assert_eq!(names[14], "B0[2,1]");
    }

    #[test]
    fn stationarity_check() {
        let theta = theta_3x3_diag();
        assert!(theta.is_stationary(0.999));
        let mut boom = theta.clone();
        boom.trace.beta = 0.75; // alpha + beta > 1
        assert!(!boom.is_stationary(0.999));
        let mut spectral = theta;
        spectral.row.arch[(0, 0)] = 0.9; // 0.81 + 0.36 > 0.999
        assert!(!spectral.is_stationary(0.999));
    }

    proptest! {
        #[test]
        fn transform_image_is_feasible(seed in proptest::collection::vec(-3.0f64..3.0, 25)) {
            let layout = ThetaLayout::order1(3, 3, Structure::Diagonal);
            let tf = Transform::new(layout);
            let v = DVector::from_vec(seed);
            let theta = tf.unpack(&v).unwrap();
            theta.validate().unwrap();
            prop_assert!(theta.trace.omega > 0.0);
            prop_assert!(theta.trace.alpha + theta.trace.beta < 0.999);
            prop_assert!(theta.is_stationary(0.999 + 1e-12));
            // round trip back to the unconstrained coordinates
            let u = tf.pack(&theta).unwrap();
            for i in 0..u.len() {
                prop_assert!((u[i] - v[i]).abs() <= 1e-9 * (1.0 + v[i].abs()));
            }
        }
    }
}
