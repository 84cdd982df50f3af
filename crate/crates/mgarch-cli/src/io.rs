//! File formats: long-CSV panels, JSON parameter bundles and fit results.
//!
//! Panels travel as long CSV with header `time,row,col,value`, one cell per
//! record, rows grouped by time in file order, 1-based row/col indices and a
//! complete m×n grid per time point. Values are written with Rust's shortest
//! round-trip float formatting, so save → load is lossless.

use std::collections::HashSet;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use mgarch::{
    pack_natural, FitResult, MatrixPanel, Sandwich, SecondOrderParams, SideParams, Structure,
    Theta, TraceParams,
};

/// Load a panel from long CSV (`time,row,col,value`).
pub fn load_panel(path: &Path) -> Result<MatrixPanel> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    {
        let headers = reader.headers().context("missing header")?;
        let want = ["time", "row", "col", "value"];
        if headers.len() != 4 || headers.iter().zip(want).any(|(h, w)| h != w) {
            bail!("expected header `time,row,col,value`, got `{}`", headers.iter().collect::<Vec<_>>().join(","));
        }
    }
    struct Cell {
        time: String,
        row: usize,
        col: usize,
        value: f64,
        line: u64,
    }
    let mut cells: Vec<Cell> = Vec::new();
    for record in reader.records() {
        let record = record.context("malformed CSV record")?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 4 {
            bail!("line {line}: expected 4 fields, got {}", record.len());
        }
        let time = record[0].to_string();
        let row: usize = record[1]
            .parse()
            .map_err(|_| anyhow!("line {line}: row index `{}` is not a positive integer", &record[1]))?;
        let col: usize = record[2]
            .parse()
            .map_err(|_| anyhow!("line {line}: col index `{}` is not a positive integer", &record[2]))?;
        let value: f64 = record[3]
            .parse()
            .map_err(|_| anyhow!("line {line}: value `{}` is not numeric", &record[3]))?;
        if row == 0 || col == 0 {
            bail!("line {line}: row/col indices are 1-based");
        }
        if !value.is_finite() {
            bail!("line {line}: non-finite value");
        }
        cells.push(Cell { time, row, col, value, line });
    }
    if cells.is_empty() {
        bail!("panel file contains no data rows");
    }
    let m = cells.iter().map(|c| c.row).max().unwrap();
    let n = cells.iter().map(|c| c.col).max().unwrap();

    // group by time label in file order; a label must not reappear after a
    // different one (the file must be sorted/grouped by time)
    let mut labels: Vec<String> = Vec::new();
    let mut groups: Vec<Vec<&Cell>> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for cell in &cells {
        match labels.last() {
            Some(last) if *last == cell.time => groups.last_mut().unwrap().push(cell),
            _ => {
                if seen.contains(&cell.time) {
                    bail!(
                        "line {}: time `{}` reappears after other time points; group the file by time",
                        cell.line,
                        cell.time
                    );
                }
                seen.insert(cell.time.clone());
                labels.push(cell.time.clone());
                groups.push(vec![cell]);
            }
        }
    }
    let mut data = Vec::with_capacity(groups.len());
    for (label, group) in labels.iter().zip(&groups) {
        let mut mat = DMatrix::from_element(m, n, f64::NAN);
        for cell in group {
            if !mat[(cell.row - 1, cell.col - 1)].is_nan() {
                bail!("line {}: duplicate cell (time={label}, row={}, col={})", cell.line, cell.row, cell.col);
            }
            mat[(cell.row - 1, cell.col - 1)] = cell.value;
        }
        for j in 0..n {
            for i in 0..m {
                if mat[(i, j)].is_nan() {
                    bail!("missing cell (time={label}, row={}, col={})", i + 1, j + 1);
                }
            }
        }
        data.push(mat);
    }
    MatrixPanel::with_labels(data, labels).map_err(|e| anyhow!("{e}"))
}

/// Save a panel as long CSV.
pub fn save_panel(panel: &MatrixPanel, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .with_context(|| format!("cannot create {}", path.display()))?;
    writer.write_record(["time", "row", "col", "value"])?;
    let (m, n) = panel.dims();
    for t in 0..panel.len() {
        let label = panel
            .time_labels()
            .map(|l| l[t].clone())
            .unwrap_or_else(|| (t + 1).to_string());
        let x = panel.get(t);
        for i in 0..m {
            for j in 0..n {
                writer.write_record([
                    label.as_str(),
                    &(i + 1).to_string(),
                    &(j + 1).to_string(),
                    &format!("{}", x[(i, j)]),
                ])?;
            }
        }
    }
    writer.flush()?;
    Ok(())
}

fn mat_to_rows(mat: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..mat.nrows())
        .map(|i| (0..mat.ncols()).map(|j| mat[(i, j)]).collect())
        .collect()
}

fn rows_to_mat(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let d = rows.len();
    if d == 0 || rows.iter().any(|r| r.len() != rows[0].len()) {
        bail!("{what}: ragged or empty matrix");
    }
    let cols = rows[0].len();
    Ok(DMatrix::from_fn(d, cols, |i, j| rows[i][j]))
}

/// JSON form of the second-lag parameter block.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecondOrderDto {
    pub alpha2: f64,
    pub beta2: f64,
    pub a3: Vec<Vec<f64>>,
    pub a4: Vec<Vec<f64>>,
    pub b3: Vec<Vec<f64>>,
    pub b4: Vec<Vec<f64>>,
}

/// JSON form of a parameter bundle.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaDto {
    pub structure: String,
    pub omega: f64,
    pub alpha: f64,
    pub beta: f64,
    pub a0: Vec<Vec<f64>>,
    pub a1: Vec<Vec<f64>>,
    pub a2: Vec<Vec<f64>>,
    pub b0: Vec<Vec<f64>>,
    pub b1: Vec<Vec<f64>>,
    pub b2: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second: Option<SecondOrderDto>,
}

pub fn structure_from_str(s: &str) -> Result<Structure> {
    match s {
        "diagonal" => Ok(Structure::Diagonal),
        "full" => Ok(Structure::Full),
        other => bail!("unknown structure `{other}` (expected `diagonal` or `full`)"),
    }
}

pub fn structure_name(s: Structure) -> &'static str {
    match s {
        Structure::Diagonal => "diagonal",
        Structure::Full => "full",
    }
}

impl ThetaDto {
    pub fn from_theta(theta: &Theta) -> Self {
        ThetaDto {
            structure: structure_name(theta.row.structure).to_string(),
            omega: theta.trace.omega,
            alpha: theta.trace.alpha,
            beta: theta.trace.beta,
            a0: mat_to_rows(&theta.row.intercept_root),
            a1: mat_to_rows(&theta.row.arch),
            a2: mat_to_rows(&theta.row.garch),
            b0: mat_to_rows(&theta.col.intercept_root),
            b1: mat_to_rows(&theta.col.arch),
            b2: mat_to_rows(&theta.col.garch),
            second: theta.second.as_ref().map(|s| SecondOrderDto {
                alpha2: s.trace_arch,
                beta2: s.trace_garch,
                a3: mat_to_rows(&s.row_arch),
                a4: mat_to_rows(&s.row_garch),
                b3: mat_to_rows(&s.col_arch),
                b4: mat_to_rows(&s.col_garch),
            }),
        }
    }

    pub fn into_theta(&self) -> Result<Theta> {
        let structure = structure_from_str(&self.structure)?;
        let theta = Theta {
            trace: TraceParams { omega: self.omega, alpha: self.alpha, beta: self.beta },
            row: SideParams {
                intercept_root: rows_to_mat(&self.a0, "a0")?,
                arch: rows_to_mat(&self.a1, "a1")?,
                garch: rows_to_mat(&self.a2, "a2")?,
                structure,
            },
            col: SideParams {
                intercept_root: rows_to_mat(&self.b0, "b0")?,
                arch: rows_to_mat(&self.b1, "b1")?,
                garch: rows_to_mat(&self.b2, "b2")?,
                structure,
            },
            second: match &self.second {
                Some(s) => Some(SecondOrderParams {
                    trace_arch: s.alpha2,
                    trace_garch: s.beta2,
                    row_arch: rows_to_mat(&s.a3, "a3")?,
                    row_garch: rows_to_mat(&s.a4, "a4")?,
                    col_arch: rows_to_mat(&s.b3, "b3")?,
                    col_garch: rows_to_mat(&s.b4, "b4")?,
                }),
                None => None,
            },
        };
        theta.validate().map_err(|e| anyhow!("{e}"))?;
        Ok(theta)
    }
}

/// JSON form of a fit result (re-ingestible by `diagnose`).
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitDto {
    pub m: usize,
    pub n: usize,
    pub t_len: usize,
    pub param_names: Vec<String>,
    pub estimate: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub theta: ThetaDto,
    pub neg_loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub multistart_best_of: usize,
    pub boundary: bool,
    pub grad_inf_norm: f64,
    pub active: Vec<bool>,
    pub c0: Vec<Vec<f64>>,
    pub c1: Vec<Vec<f64>>,
    pub avar: Vec<Vec<f64>>,
}

impl FitDto {
    pub fn from_fit(fit: &FitResult, panel: &MatrixPanel) -> Result<Self> {
        let sw = fit
            .sandwich
            .as_ref()
            .ok_or_else(|| anyhow!("fit carries no sandwich estimate"))?;
        let (m, n) = panel.dims();
        let layout = fit.theta_hat.layout();
        Ok(FitDto {
            m,
            n,
            t_len: panel.len(),
            param_names: layout.param_names(),
            estimate: pack_natural(&fit.theta_hat).as_slice().to_vec(),
            std_errors: sw.std_errors.as_slice().to_vec(),
            theta: ThetaDto::from_theta(&fit.theta_hat),
            neg_loglik: fit.neg_loglik,
            converged: fit.converged,
            iterations: fit.iterations,
            multistart_best_of: fit.multistart_best_of,
            boundary: fit.boundary,
            grad_inf_norm: fit.grad_inf_norm,
            active: fit.active.clone(),
            c0: mat_to_rows(&sw.c0),
            c1: mat_to_rows(&sw.c1),
            avar: mat_to_rows(&sw.avar),
        })
    }

    pub fn into_fit(&self) -> Result<FitResult> {
        let theta = self.theta.into_theta()?;
        let p = theta.layout().param_count();
        if self.estimate.len() != p || self.std_errors.len() != p || self.active.len() != p {
            bail!("fit file inconsistent with its own layout (p = {p})");
        }
        let c0 = rows_to_mat(&self.c0, "c0")?;
        let c1 = rows_to_mat(&self.c1, "c1")?;
        let avar = rows_to_mat(&self.avar, "avar")?;
        Ok(FitResult {
            theta_hat: theta,
            neg_loglik: self.neg_loglik,
            sandwich: Some(Sandwich {
                c0,
                c1,
                avar,
                std_errors: nalgebra::DVector::from_column_slice(&self.std_errors),
            }),
            converged: self.converged,
            iterations: self.iterations,
            multistart_best_of: self.multistart_best_of,
            boundary: self.boundary,
            active: self.active.clone(),
            grad_inf_norm: self.grad_inf_norm,
        })
    }
}

/// Write a JSON value with a trailing newline.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// Read a JSON file.
pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid JSON in {}", path.display()))
}
