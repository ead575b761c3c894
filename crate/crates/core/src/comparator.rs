//! Classical Nernst-Planck electrolyte at equilibrium (Poisson-Boltzmann).
//!
//! Solves `-lambda^2 lap(phi) = sum_a z_a y_a^R exp(-z_a (phi - phi^R))` with
//! P1 elements and nodal quadrature of the charge, then reconstructs
//! the fractions from the Boltzmann factors. Nothing bounds these fractions:
//! at large bias they exceed one.

use std::sync::Arc;

use thiserror::Error;

use crate::fem::{build_pattern, harmonic_lifting, BoundaryValue, Constraint, DofMap};
use crate::linalg::SparseMatrix;
use crate::mesh::{BoundaryTag, FieldOnMesh, Mesh};
use crate::solver::{continuation_steps, damped_newton, Assembly, NewtonConfig, SolveReport, SolverError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PbError {
    #[error("bulk state is not electroneutral: sum z y = {0:e}")]
    NotNeutral(f64),
    #[error("invalid comparator problem: {0}")]
    Config(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Poisson-Boltzmann problem for the charged species of a mixture.
#[derive(Debug, Clone)]
pub struct PbProblem {
    mesh: Arc<Mesh>,
    lambda2: f64,
    charges: Vec<f64>,
    bulk: Vec<f64>,
    phi_ref: f64,
    dirichlet: Vec<(BoundaryTag, BoundaryValue)>,
    bias: f64,
}

impl PbProblem {
    pub fn new(
        mesh: Arc<Mesh>,
        lambda2: f64,
        charges: Vec<f64>,
        bulk: Vec<f64>,
        phi_ref: f64,
        dirichlet: Vec<(BoundaryTag, BoundaryValue)>,
    ) -> Result<Self, PbError> {
        if !(lambda2 > 0.0) {
            return Err(PbError::Config(format!("lambda2 must be positive, got {lambda2}")));
        }
        if charges.len() != bulk.len() || charges.is_empty() {
            return Err(PbError::Config("need one bulk fraction per charged species".into()));
        }
        let net: f64 = charges.iter().zip(&bulk).map(|(z, y)| z * y).sum();
        if net.abs() > 1e-12 {
            return Err(PbError::NotNeutral(net));
        }
        if dirichlet.is_empty() {
            return Err(PbError::Config("the potential needs Dirichlet data".into()));
        }
        if let Some((tag, _)) = dirichlet.iter().find(|(t, _)| !mesh.has_tag(*t)) {
            return Err(PbError::Config(format!("unknown boundary tag `{}`", tag.name())));
        }
        Ok(Self {
            mesh,
            lambda2,
            charges,
            bulk,
            phi_ref,
            dirichlet,
            bias: 0.0,
        })
    }

    pub fn with_bias(&self, bias: f64) -> Self {
        Self { bias, ..self.clone() }
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    fn constraints(&self) -> Vec<Constraint> {
        let mut seen = vec![false; self.mesh.n_nodes()];
        let mut out = Vec::new();
        for (tag, value) in &self.dirichlet {
            for node in self.mesh.tagged_nodes(*tag) {
                if !std::mem::replace(&mut seen[node], true) {
                    out.push(Constraint {
                        dof: node,
                        value: value.at(self.bias),
                    });
                }
            }
        }
        out
    }

    /// Space charge `sum z y^R exp(-z (phi - phi^R))` and its derivative.
    fn charge(&self, phi: f64) -> (f64, f64) {
        self.charges.iter().zip(&self.bulk).fold((0.0, 0.0), |(r, dr), (z, y)| {
            let b = y * (-z * (phi - self.phi_ref)).exp();
            (r + z * b, dr - z * z * b)
        })
    }

    fn assemble(
        &self,
        phi: &[f64],
        constraints: &[Constraint],
        pattern: &Arc<crate::linalg::SparsityPattern>,
    ) -> (Vec<f64>, SparseMatrix) {
        let mesh = &*self.mesh;
        let mut residual = vec![0.0; mesh.n_nodes()];
        let mut jac = SparseMatrix::zeros(pattern.clone());
        let inv_l2 = 1.0 / self.lambda2;
        for c in 0..mesh.n_cells() {
            let nodes = mesh.cell(c);
            let g = mesh.basis_gradients(c);
            let measure = mesh.cell_measure(c);
            let grad = nodes.iter().enumerate().fold([0.0; 2], |acc, (a, &n)| {
                [acc[0] + phi[n] * g[a][0], acc[1] + phi[n] * g[a][1]]
            });
            for (i, &ni) in nodes.iter().enumerate() {
                residual[ni] += measure * (grad[0] * g[i][0] + grad[1] * g[i][1]);
                for (j, &nj) in nodes.iter().enumerate() {
                    jac.add(ni, nj, measure * (g[i][0] * g[j][0] + g[i][1] * g[j][1]));
                }
            }
            // Nodal quadrature keeps the discrete maximum principle when the
            // wall layer is thinner than a cell.
            let w = measure / nodes.len() as f64;
            for &ni in nodes {
                let (rho, drho) = self.charge(phi[ni]);
                residual[ni] -= w * inv_l2 * rho;
                jac.add(ni, ni, -w * inv_l2 * drho);
            }
        }
        for k in constraints {
            residual[k.dof] = phi[k.dof] - k.value;
            jac.set_unit_row(k.dof);
        }
        (residual, jac)
    }

    fn newton(&self, start: Vec<f64>, cfg: &NewtonConfig) -> Result<(Vec<f64>, SolveReport), SolverError> {
        let pattern = Arc::new(build_pattern(&self.mesh, DofMap::new(self.mesh.n_nodes(), 0)));
        let constraints = self.constraints();
        let mut x = start;
        for k in &constraints {
            x[k.dof] = k.value;
        }
        damped_newton(
            x,
            cfg,
            |v| {
                let (r, j) = self.assemble(v, &constraints, &pattern);
                Ok(Assembly::Ok(r, j))
            },
            |v| v.iter().all(|x| x.is_finite()),
        )
    }
}

/// Potential and reconstructed fractions of a Poisson-Boltzmann solve.
#[derive(Debug, Clone)]
pub struct PbSolution {
    pub phi: FieldOnMesh,
    /// Charged-species fractions followed by `1 - sum`, one component each.
    pub fractions: FieldOnMesh,
    pub report: SolveReport,
}

impl PbSolution {
    /// Nodal profile in the layout of the full model: `[phi, p, y_1..y_N, n^F, n]`.
    /// The classical model has no pressure, so that column is NaN; `n = 1`.
    pub fn to_profile(&self, charges: &[f64]) -> FieldOnMesh {
        let mesh = self.phi.mesh().clone();
        let ny = self.fractions.n_components();
        let mut values = Vec::with_capacity(mesh.n_nodes() * (ny + 4));
        for node in 0..mesh.n_nodes() {
            values.push(self.phi.value(node, 0));
            values.push(f64::NAN);
            let y: Vec<f64> = (0..ny).map(|k| self.fractions.value(node, k)).collect();
            values.extend_from_slice(&y);
            values.push(charges.iter().zip(&y).map(|(z, y)| z * y).sum());
            values.push(1.0);
        }
        FieldOnMesh::new(mesh, ny + 4, values).expect("consistent profile size")
    }
}

/// Solves the Poisson-Boltzmann problem at the problem's bias, ramping the
/// bias from zero in steps of at most `cfg.delta_max`.
pub fn solve_poisson_boltzmann(prob: &PbProblem, cfg: &NewtonConfig) -> Result<PbSolution, PbError> {
    let n = prob.mesh.n_nodes();
    let start_problem = prob.with_bias(0.0);
    let lifting = harmonic_lifting(&prob.mesh, &start_problem.constraints(), DofMap::new(n, 0))
        .map_err(|e| PbError::Config(e.to_string()))?;
    let k = continuation_steps(prob.bias, cfg.delta_max);
    let mut phi = lifting;
    let mut report = SolveReport::default();
    for step in 1..=k {
        let bias = prob.bias * step as f64 / k as f64;
        let (next, r) = prob
            .with_bias(bias)
            .newton(phi, cfg)
            .map_err(|source| SolverError::ContinuationStep {
                step,
                bias,
                source: Box::new(source),
            })?;
        report.converged = r.converged;
        report.iterations += r.iterations;
        report.damping_events += r.damping_events;
        report.residual_history.extend(r.residual_history);
        report.step_history.extend(r.step_history);
        report.continuation_steps.push((bias, r.iterations));
        phi = next;
    }

    let m = prob.charges.len();
    let mut fractions = Vec::with_capacity(n * (m + 1));
    for &value in &phi {
        let mut total = 0.0;
        for (z, y) in prob.charges.iter().zip(&prob.bulk) {
            let f = y * (-z * (value - prob.phi_ref)).exp();
            total += f;
            fractions.push(f);
        }
        fractions.push(1.0 - total);
    }
    let mesh = prob.mesh.clone();
    Ok(PbSolution {
        phi: FieldOnMesh::new(mesh.clone(), 1, phi).expect("one value per node"),
        fractions: FieldOnMesh::new(mesh, m + 1, fractions).expect("consistent sizes"),
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_interval_mesh;
    use approx::assert_relative_eq;

    fn channel(cells: usize, lambda2: f64, bulk: f64) -> PbProblem {
        let mesh = Arc::new(build_interval_mesh(0.0, 1.0, cells).unwrap());
        PbProblem::new(
            mesh,
            lambda2,
            vec![-1.0, 1.0],
            vec![bulk, bulk],
            0.0,
            vec![
                (BoundaryTag::Left, BoundaryValue::Biased { offset: 0.0 }),
                (BoundaryTag::Right, BoundaryValue::Constant(0.0)),
            ],
        )
        .unwrap()
    }

    #[test]
    fn zero_bias_is_bulk() {
        let sol = solve_poisson_boltzmann(&channel(64, 8.553e-6, 1.0 / 3.0), &NewtonConfig::default()).unwrap();
        for node in 0..65 {
            assert_eq!(sol.phi.value(node, 0), 0.0);
            assert_relative_eq!(sol.fractions.value(node, 0), 1.0 / 3.0);
        }
    }

    #[test]
    fn unresolved_wall_layer_stays_monotone() {
        // h is 0.1 Debye lengths but the layer at bias 24 is much thinner.
        let prob = channel(8192, 2.4e-6, 0.5 / 55.0).with_bias(23.7);
        let sol = solve_poisson_boltzmann(&prob, &NewtonConfig::default()).unwrap();
        let phi = sol.phi.values();
        assert!(phi.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!(phi.iter().all(|&v| (0.0..=23.7).contains(&v)));
    }

    #[test]
    fn matches_gouy_chapman() {
        let (lambda2, y, bias) = (8.553e-6, 0.01, 10.0);
        let sol =
            solve_poisson_boltzmann(&channel(8192, lambda2, y).with_bias(bias), &NewtonConfig::default()).unwrap();
        let debye = (lambda2 / (2.0 * y)).sqrt();
        for node in [8, 16, 64, 256] {
            let x = sol.phi.mesh().node(node)[0];
            let exact = 4.0 * ((bias / 4.0).tanh() * (-x / debye).exp()).atanh();
            assert_relative_eq!(sol.phi.value(node, 0), exact, max_relative = 2e-3);
        }
    }

    #[test]
    fn wall_fraction_is_boltzmann_factor() {
        let prob = channel(512, 8.553e-6, 1.0 / 3.0).with_bias(2.0);
        let sol = solve_poisson_boltzmann(&prob, &NewtonConfig::default()).unwrap();
        let wall = sol.fractions.value(0, 0);
        assert_relative_eq!(wall, 2f64.exp() / 3.0, max_relative = 1e-12);
        assert!(wall > 1.0);
        assert!(sol.fractions.value(0, 2) < 0.0);
    }

    #[test]
    fn debye_length_of_weak_bias() {
        let (lambda2, bulk) = (8.553e-6, 0.01);
        let prob = channel(8192, lambda2, bulk).with_bias(0.01);
        let sol = solve_poisson_boltzmann(&prob, &NewtonConfig::default()).unwrap();
        let expected = (lambda2 / (2.0 * bulk)).sqrt();
        // least-squares slope of ln(phi) over a window inside the layer
        let pts: Vec<(f64, f64)> = (0..=8192)
            .map(|i| (i as f64 / 8192.0, sol.phi.value(i, 0)))
            .filter(|(x, _)| *x >= expected && *x <= 4.0 * expected)
            .map(|(x, p)| (x, p.ln()))
            .collect();
        let n = pts.len() as f64;
        let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
        let (mx, my) = (sx / n, sy / n);
        let slope = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
            / pts.iter().map(|(x, _)| (x - mx).powi(2)).sum::<f64>();
        let fitted = -1.0 / slope;
        assert!((fitted / expected - 1.0).abs() < 0.02, "{fitted} vs {expected}");
    }

    #[test]
    fn boltzmann_relation_holds_everywhere() {
        let prob = channel(256, 8.553e-6, 0.1).with_bias(-3.0);
        let sol = solve_poisson_boltzmann(&prob, &NewtonConfig::default()).unwrap();
        for (k, z) in [-1.0f64, 1.0].into_iter().enumerate() {
            for node in 0..257 {
                let inv = sol.fractions.value(node, k) * (z * sol.phi.value(node, 0)).exp();
                assert_relative_eq!(inv, 0.1, max_relative = 1e-13);
            }
        }
    }

    #[test]
    fn rejects_charged_bulk() {
        let mesh = Arc::new(build_interval_mesh(0.0, 1.0, 4).unwrap());
        let err = PbProblem::new(
            mesh,
            1.0,
            vec![-1.0, 1.0],
            vec![0.2, 0.1],
            0.0,
            vec![(BoundaryTag::Left, BoundaryValue::Constant(0.0))],
        );
        assert!(matches!(err, Err(PbError::NotNeutral(_))));
    }
}
