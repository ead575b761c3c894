//! Derived quantities: stored charge, capacitance sweeps, error norms and
//! mesh convergence studies.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::fem::{cell_quadrature, fractions_from_unknowns, FieldState, Problem};
use crate::mesh::{interpolate_p1, FieldOnMesh, Mesh, MeshError};
use crate::physics::Mixture;
use crate::solver::{continuation_from, continuation_solve, NewtonConfig, SolverError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("solve failed at phi_L = {phi_l}: {source}")]
    Sweep { phi_l: f64, source: SolverError },
    #[error("solve failed on {cells} cells: {message}")]
    Study { cells: usize, message: String },
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("meshes cover different domains")]
    DomainMismatch,
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Total free charge `int n^F dx`, with the quadrature of the assembly.
pub fn total_charge(state: &FieldState, mixture: &Mixture) -> f64 {
    let mesh = state.mesh();
    let nf = state.dofs().n_fields;
    let z: Vec<f64> = mixture.charges().collect();
    let values = state.values();
    let mut q = 0.0;
    let mut at = vec![0.0; nf];
    for c in 0..mesh.n_cells() {
        let nodes = mesh.cell(c);
        for (bary, w) in cell_quadrature(mesh, c) {
            at.fill(0.0);
            for (a, &node) in nodes.iter().enumerate() {
                for (f, v) in at.iter_mut().enumerate() {
                    *v += bary[a] * values[node * nf + f];
                }
            }
            let y = fractions_from_unknowns(state.variables(), &at[2..]);
            let zbar: f64 = z.iter().zip(&y).map(|(z, y)| z * y).sum();
            q += w * mixture.number_density_unchecked(at[1]) * zbar;
        }
    }
    q
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CapacitancePoint {
    pub phi_l: f64,
    pub q: f64,
    pub c_dl: f64,
}

/// Stored charge and differential capacitance over a uniform potential grid.
///
/// `c_dl` is the derivative of the electrode charge `-Q` with respect to the
/// applied potential, so it is positive for a stable double layer.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CapacitanceCurve {
    pub points: Vec<CapacitancePoint>,
}

impl CapacitanceCurve {
    /// Builds the curve from charges on a uniform grid: central differences
    /// inside, second-order one-sided differences at the ends.
    pub fn from_charges(phi_l: &[f64], q: &[f64]) -> Result<Self, AnalysisError> {
        let step = check_grid(phi_l)?;
        if q.len() != phi_l.len() {
            return Err(AnalysisError::Grid("one charge per grid point required".into()));
        }
        let n = q.len();
        let points = (0..n)
            .map(|i| {
                let dq = if i == 0 {
                    (-3.0 * q[0] + 4.0 * q[1] - q[2]) / (2.0 * step)
                } else if i == n - 1 {
                    (3.0 * q[n - 1] - 4.0 * q[n - 2] + q[n - 3]) / (2.0 * step)
                } else {
                    (q[i + 1] - q[i - 1]) / (2.0 * step)
                };
                CapacitancePoint {
                    phi_l: phi_l[i],
                    q: q[i],
                    c_dl: -dq,
                }
            })
            .collect();
        Ok(Self { points })
    }

    /// Indices of strict local maxima of `c_dl` at interior grid points.
    pub fn local_maxima(&self) -> Vec<usize> {
        self.interior_extrema(|prev, here, next| here > prev && here > next)
    }

    /// Indices of strict local minima of `c_dl` at interior grid points.
    pub fn local_minima(&self) -> Vec<usize> {
        self.interior_extrema(|prev, here, next| here < prev && here < next)
    }

    fn interior_extrema(&self, test: impl Fn(f64, f64, f64) -> bool) -> Vec<usize> {
        let c: Vec<f64> = self.points.iter().map(|p| p.c_dl).collect();
        (1..c.len().saturating_sub(1))
            .filter(|&i| test(c[i - 1], c[i], c[i + 1]))
            .collect()
    }
}

fn check_grid(grid: &[f64]) -> Result<f64, AnalysisError> {
    if grid.len() < 3 {
        return Err(AnalysisError::Grid("need at least 3 points".into()));
    }
    let step = grid[1] - grid[0];
    if !(step > 0.0) {
        return Err(AnalysisError::Grid("grid must be strictly increasing".into()));
    }
    for w in grid.windows(2) {
        if ((w[1] - w[0]) - step).abs() > 1e-9 * step.max(1.0) {
            return Err(AnalysisError::Grid("grid must be uniform".into()));
        }
    }
    Ok(step)
}

/// Uniform grid `lo, lo + step, .., hi`.
pub fn uniform_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + i as f64 * step).collect()
}

/// Solves at every grid point, sweeping outward from the point nearest zero
/// in both directions (concurrently), each solve warm-started from its
/// neighbor. The grid values are the bias `phi_L - phi_R`.
pub fn capacitance_sweep(
    grid: &[f64],
    problem: &Problem,
    cfg: &NewtonConfig,
) -> Result<CapacitanceCurve, AnalysisError> {
    check_grid(grid)?;
    let start = (0..grid.len())
        .min_by(|&a, &b| grid[a].abs().total_cmp(&grid[b].abs()))
        .expect("non-empty grid");
    let (origin, _) = continuation_solve(grid[start], problem, cfg).map_err(|source| AnalysisError::Sweep {
        phi_l: grid[start],
        source,
    })?;
    let q0 = total_charge(&origin, problem.mixture());

    let walk = |indices: Vec<usize>| -> Result<Vec<(usize, f64)>, AnalysisError> {
        let mut state = origin.clone();
        let mut bias = grid[start];
        let mut out = Vec::with_capacity(indices.len());
        for i in indices {
            let (next, _) = continuation_from(state, bias, grid[i], problem, cfg)
                .map_err(|source| AnalysisError::Sweep { phi_l: grid[i], source })?;
            out.push((i, total_charge(&next, problem.mixture())));
            state = next;
            bias = grid[i];
        }
        Ok(out)
    };
    let (up, down) = rayon::join(
        || walk((start + 1..grid.len()).collect()),
        || walk((0..start).rev().collect()),
    );
    let mut q = vec![0.0; grid.len()];
    q[start] = q0;
    for (i, v) in up?.into_iter().chain(down?) {
        q[i] = v;
    }
    CapacitanceCurve::from_charges(grid, &q)
}

/// L2 and maximum norms of `fine - I(coarse)` per component, where `I`
/// interpolates the coarse P1 field at the fine nodes. The L2 integral is
/// exact for the resulting P1 difference.
pub fn error_norms(coarse: &FieldOnMesh, fine: &FieldOnMesh) -> Result<Vec<(f64, f64)>, AnalysisError> {
    let (cl, cu) = coarse.mesh().bounds();
    let (fl, fu) = fine.mesh().bounds();
    let tol = 1e-12 * (0..2).map(|d| cu[d] - cl[d]).fold(1.0, f64::max);
    if (0..2).any(|d| (cl[d] - fl[d]).abs() > tol || (cu[d] - fu[d]).abs() > tol)
        || coarse.n_components() != fine.n_components()
    {
        return Err(AnalysisError::DomainMismatch);
    }
    let projected = interpolate_p1(coarse, fine.mesh())?;
    let mesh = fine.mesh();
    let k = fine.n_components();
    let diff: Vec<f64> = fine
        .values()
        .iter()
        .zip(projected.values())
        .map(|(a, b)| a - b)
        .collect();
    (0..k)
        .map(|comp| {
            let d = |node: usize| diff[node * k + comp];
            let einf = (0..mesh.n_nodes()).map(|i| d(i).abs()).fold(0.0, f64::max);
            Ok((p1_l2_norm(mesh, d), einf))
        })
        .collect()
}

/// Exact L2 norm of a P1 function given by its nodal values.
pub fn p1_l2_norm(mesh: &Mesh, nodal: impl Fn(usize) -> f64) -> f64 {
    let denom = match mesh.dim() {
        1 => 6.0,
        _ => 12.0,
    };
    let total: f64 = (0..mesh.n_cells())
        .map(|c| {
            let v: Vec<f64> = mesh.cell(c).iter().map(|&i| nodal(i)).collect();
            let sum: f64 = v.iter().sum();
            let squares: f64 = v.iter().map(|x| x * x).sum();
            mesh.cell_measure(c) * (squares + sum * sum) / denom
        })
        .sum();
    total.sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub n_cells: usize,
    pub h: f64,
    pub field: String,
    pub e2: f64,
    pub einf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FittedOrder {
    pub field: String,
    pub e2: f64,
    pub einf: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slopes of `log e` against `log h`, per field.
    pub slopes: Vec<FittedOrder>,
}

impl ConvergenceTable {
    pub fn rows_for<'a>(&'a self, field: &'a str) -> impl Iterator<Item = &'a ConvergenceRow> + 'a {
        self.rows.iter().filter(move |r| r.field == field)
    }

    pub fn slope(&self, field: &str) -> Option<&FittedOrder> {
        self.slopes.iter().find(|s| s.field == field)
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Solves on each mesh in `cells` and on the reference mesh, then tabulates
/// per-field errors against the reference. `solve` returns the nodal profile
/// for a cell count; `fields` names profile components as `(label, index)`.
/// The solves run concurrently.
pub fn convergence_study<F>(
    cells: &[usize],
    reference: usize,
    fields: &[(String, usize)],
    solve: F,
) -> Result<ConvergenceTable, AnalysisError>
where
    F: Fn(usize) -> Result<FieldOnMesh, String> + Sync,
{
    if cells.windows(2).any(|w| w[1] <= w[0]) || cells.is_empty() {
        return Err(AnalysisError::Grid("cell counts must be strictly increasing".into()));
    }
    let run = |n: usize| solve(n).map_err(|message| AnalysisError::Study { cells: n, message });
    let (reference_profile, coarse) = rayon::join(
        || run(reference),
        || cells.par_iter().map(|&n| run(n)).collect::<Result<Vec<_>, _>>(),
    );
    let reference_profile = reference_profile?;
    let coarse = coarse?;

    let mut table = ConvergenceTable::default();
    for (&n, profile) in cells.iter().zip(&coarse) {
        let norms = error_norms(profile, &reference_profile)?;
        let h = profile.mesh().max_cell_size();
        for (label, comp) in fields {
            let (e2, einf) = norms[*comp];
            table.rows.push(ConvergenceRow {
                n_cells: n,
                h,
                field: label.clone(),
                e2,
                einf,
            });
        }
    }
    for (label, _) in fields {
        let rows: Vec<&ConvergenceRow> = table.rows_for(label).collect();
        let h: Vec<f64> = rows.iter().map(|r| r.h).collect();
        let e2: Vec<f64> = rows.iter().map(|r| r.e2).collect();
        let einf: Vec<f64> = rows.iter().map(|r| r.einf).collect();
        let order = if rows.len() >= 2 {
            FittedOrder {
                field: label.clone(),
                e2: loglog_slope(&h, &e2),
                einf: loglog_slope(&h, &einf),
            }
        } else {
            FittedOrder {
                field: label.clone(),
                e2: f64::NAN,
                einf: f64::NAN,
            }
        };
        table.slopes.push(order);
    }
    Ok(table)
}
