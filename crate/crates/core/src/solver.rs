//! Damped Newton iteration with a feasibility safeguard, and bias continuation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fem::{FemError, FieldState, Problem, SpeciesVariables};
use crate::linalg::{linear_solve, norm_inf, LinearSolveError, SparseMatrix};
use crate::physics::Compressibility;

/// Maximum number of step halvings per Newton iteration.
pub const MAX_HALVINGS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonConfig {
    /// Damping factor in (0, 1].
    pub gamma: f64,
    pub tol_abs: f64,
    /// Step tolerance, relative to `1 + |x|_inf`.
    pub tol_step: f64,
    pub max_iter: usize,
    /// Margin that nodal mole fractions must keep from 0 and 1.
    pub y_floor: f64,
    /// Switch to full steps once the residual drops below `switch_threshold`.
    pub accelerate: bool,
    pub switch_threshold: f64,
    /// Largest bias increment per continuation step.
    pub delta_max: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            gamma: 0.25,
            tol_abs: 1e-10,
            tol_step: 1e-12,
            max_iter: 200,
            y_floor: 1e-12,
            accelerate: true,
            switch_threshold: 1e-3,
            delta_max: 1.0,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |msg: String| Err(SolverError::Config(msg));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        for (name, v) in [
            ("tol_abs", self.tol_abs),
            ("tol_step", self.tol_step),
            ("y_floor", self.y_floor),
            ("switch_threshold", self.switch_threshold),
            ("delta_max", self.delta_max),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.max_iter == 0 {
            return bad("max_iter must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub converged: bool,
    pub iterations: usize,
    /// Residual infinity norms, starting with the initial state.
    pub residual_history: Vec<f64>,
    /// Infinity norms of the undamped Newton steps.
    pub step_history: Vec<f64>,
    pub damping_events: usize,
    /// `(bias, iterations)` per continuation step.
    pub continuation_steps: Vec<(f64, usize)>,
}

impl SolveReport {
    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(f64::NAN)
    }

    fn absorb(&mut self, other: SolveReport, bias: f64) {
        self.converged = other.converged;
        self.iterations += other.iterations;
        self.residual_history.extend(other.residual_history);
        self.step_history.extend(other.step_history);
        self.damping_events += other.damping_events;
        self.continuation_steps.push((bias, other.iterations));
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("Newton did not converge in {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("linear solve failed in Newton iteration {iteration}: {source}")]
    LinearSolveFailure { iteration: usize, source: LinearSolveError },
    #[error("no admissible update after {MAX_HALVINGS} halvings in Newton iteration {iteration}")]
    FeasibilityExhausted { iteration: usize },
    #[error("continuation step {step} (bias {bias}) failed: {source}")]
    ContinuationStep {
        step: usize,
        bias: f64,
        source: Box<SolverError>,
    },
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error("initial state is not admissible")]
    InadmissibleStart,
    #[error("invalid solver configuration: {0}")]
    Config(String),
}

/// Checks nodal admissibility of a trial state: fractions within the floor
/// margin and pressure inside the compressible domain.
fn nodal_admissible(state: &FieldState, problem: &Problem, y_floor: f64) -> bool {
    let k = match problem.mixture().compressibility() {
        Compressibility::BulkModulus(k) => Some(k),
        Compressibility::Incompressible => None,
    };
    if state.values().iter().any(|v| !v.is_finite()) {
        return false;
    }
    (0..state.mesh().n_nodes()).all(|node| {
        if let Some(k) = k {
            if !(1.0 + (state.pressure(node) - 1.0) / k > 0.0) {
                return false;
            }
        }
        match state.variables() {
            // log-ratio unknowns are admissible for every finite value
            SpeciesVariables::LogRatio => true,
            SpeciesVariables::MoleFraction => state.fractions(node).iter().all(|&y| y > y_floor && y < 1.0 - y_floor),
        }
    })
}

/// Outcome of assembling at a trial point.
pub(crate) enum Assembly {
    Ok(Vec<f64>, SparseMatrix),
    /// The trial point lies outside the model's domain.
    Infeasible,
}

/// Damped Newton iteration on a flat vector of unknowns. `assemble` returns
/// the residual and Jacobian; `admissible` screens trial points before
/// assembly. Infeasible trial points halve the step.
pub(crate) fn damped_newton(
    x0: Vec<f64>,
    cfg: &NewtonConfig,
    mut assemble: impl FnMut(&[f64]) -> Result<Assembly, SolverError>,
    admissible: impl Fn(&[f64]) -> bool,
) -> Result<(Vec<f64>, SolveReport), SolverError> {
    cfg.validate()?;
    let mut x = x0;
    let (mut residual_vec, mut jacobian) = match assemble(&x)? {
        Assembly::Ok(r, j) => (r, j),
        Assembly::Infeasible => return Err(SolverError::InadmissibleStart),
    };
    let mut residual = norm_inf(&residual_vec);
    let mut report = SolveReport {
        residual_history: vec![residual],
        ..Default::default()
    };

    for iteration in 1..=cfg.max_iter {
        if residual <= cfg.tol_abs {
            report.converged = true;
            return Ok((x, report));
        }
        let step = linear_solve(&jacobian, &residual_vec)
            .map_err(|source| SolverError::LinearSolveFailure { iteration, source })?;
        let step_norm = norm_inf(&step);

        let mut gamma = if cfg.accelerate && residual < cfg.switch_threshold {
            1.0
        } else {
            cfg.gamma
        };
        let mut accepted = None;
        for halving in 0..=MAX_HALVINGS {
            if halving > 0 {
                gamma *= 0.5;
                report.damping_events += 1;
            }
            let trial: Vec<f64> = x.iter().zip(&step).map(|(v, d)| v - gamma * d).collect();
            if !admissible(&trial) {
                continue;
            }
            if let Assembly::Ok(r, j) = assemble(&trial)? {
                if r.iter().all(|v| v.is_finite()) {
                    accepted = Some((trial, r, j));
                    break;
                }
            }
        }
        let (trial, r, j) = accepted.ok_or(SolverError::FeasibilityExhausted { iteration })?;
        x = trial;
        residual_vec = r;
        jacobian = j;
        residual = norm_inf(&residual_vec);
        report.iterations = iteration;
        report.residual_history.push(residual);
        report.step_history.push(step_norm);
        // the step test is relative to the state scale: pressures reach 1e4
        // and their updates bottom out at roundoff well above 1e-12
        if residual <= cfg.tol_abs || step_norm <= cfg.tol_step * (1.0 + norm_inf(&x)) {
            report.converged = true;
            return Ok((x, report));
        }
    }
    Err(SolverError::NonConvergence {
        iterations: cfg.max_iter,
        residual,
    })
}

/// Damped Newton iteration from `initial`. Dirichlet values are imposed on
/// the initial state before iterating.
pub fn newton_solve(
    initial: &FieldState,
    problem: &Problem,
    cfg: &NewtonConfig,
) -> Result<(FieldState, SolveReport), SolverError> {
    let mut x = initial.convert(problem.variables())?;
    problem.impose_constraints(&mut x)?;
    if !nodal_admissible(&x, problem, 0.0) {
        return Err(SolverError::InadmissibleStart);
    }
    let template = x.clone();
    let with_values = |v: &[f64]| {
        let mut s = template.clone();
        s.values_mut().copy_from_slice(v);
        s
    };
    let (values, report) = damped_newton(
        x.values().to_vec(),
        cfg,
        |v| match problem.residual_and_jacobian(&with_values(v)) {
            Ok(sys) => Ok(Assembly::Ok(
                sys.residual,
                sys.jacobian.expect("assembled with Jacobian"),
            )),
            Err(FemError::Infeasible { .. }) => Ok(Assembly::Infeasible),
            Err(e) => Err(e.into()),
        },
        |v| nodal_admissible(&with_values(v), problem, cfg.y_floor),
    )?;
    x.values_mut().copy_from_slice(&values);
    Ok((x, report))
}

/// Number of continuation steps used to reach `target` from zero bias.
pub fn continuation_steps(target: f64, delta_max: f64) -> usize {
    ((target.abs() / delta_max).ceil() as usize).max(1)
}

/// Ramps the bias from zero to `target` in equal steps no larger than
/// `cfg.delta_max`, warm-starting each Newton solve from the previous one.
/// A single step is a direct solve from the default initial guess.
pub fn continuation_solve(
    target: f64,
    problem: &Problem,
    cfg: &NewtonConfig,
) -> Result<(FieldState, SolveReport), SolverError> {
    let start = problem.with_bias(0.0).initial_guess()?;
    continuation_from(start, 0.0, target, problem, cfg)
}

/// Continuation from a converged `state` at bias `from` to bias `to`.
pub fn continuation_from(
    state: FieldState,
    from: f64,
    to: f64,
    problem: &Problem,
    cfg: &NewtonConfig,
) -> Result<(FieldState, SolveReport), SolverError> {
    cfg.validate()?;
    let k = continuation_steps(to - from, cfg.delta_max);
    let mut report = SolveReport::default();
    let mut state = state;
    for step in 1..=k {
        let bias = from + (to - from) * step as f64 / k as f64;
        let stage = problem.with_bias(bias);
        let wrap = |source: SolverError| SolverError::ContinuationStep {
            step,
            bias,
            source: Box::new(source),
        };
        let guess = if k == 1 && from == 0.0 {
            stage.initial_guess().map_err(|e| wrap(e.into()))?
        } else {
            state
        };
        let (next, r) = newton_solve(&guess, &stage, cfg).map_err(wrap)?;
        report.absorb(r, bias);
        state = next;
    }
    Ok((state, report))
}
