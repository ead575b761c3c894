//! Scenario descriptions, embedded presets and their execution.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{capacitance_sweep, convergence_study, uniform_grid, CapacitanceCurve, ConvergenceTable};
use crate::comparator::{solve_poisson_boltzmann, PbProblem};
use crate::fem::{
    Band, BoundaryConditionSet, BoundaryValue, DirichletTarget, Field, FieldState, NeumannData, Problem,
    SpeciesVariables,
};
use crate::mesh::{build_interval_mesh, build_rectangle_mesh_with, BoundaryTag, DiagonalPattern, FieldOnMesh, Mesh};
use crate::physics::{molarity_to_fraction, Compressibility, Mixture, PhysicalConstants, Species};
use crate::solver::{continuation_solve, NewtonConfig, SolveReport};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("unknown preset `{name}`; valid presets: {}", valid.join(", "))]
    UnknownPreset { name: String, valid: Vec<String> },
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("{stage} failed: {message}")]
    Solver { stage: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunKind {
    Profile,
    Capacitance,
    Convergence,
    CompareNp,
    Diode2d,
    Mixtures,
}

/// Unit of the `bias` value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasUnits {
    /// Multiples of the thermal voltage kT/e.
    #[default]
    Thermal,
    /// Volts, converted with the thermal voltage of the default constants.
    Volts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    /// Charges of the charged species; the solvent is appended.
    pub charges: Vec<i32>,
    #[serde(default)]
    pub kappa: f64,
    /// Reference Gibbs constants of all N species, solvent last.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_ref: Option<Vec<f64>>,
    /// Bulk modulus; absent means incompressible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bulk_modulus: Option<f64>,
    pub lambda2: f64,
    pub a2: f64,
}

impl MixtureSpec {
    pub fn build(&self) -> Result<Mixture, ScenarioError> {
        let n = self.charges.len() + 1;
        let g_ref = match &self.g_ref {
            Some(g) if g.len() != n => {
                return Err(ScenarioError::Config(format!(
                    "g_ref needs {n} values, got {}",
                    g.len()
                )))
            }
            Some(g) => g.clone(),
            None => vec![0.0; n],
        };
        let mut species: Vec<Species> = self.charges.iter().map(|&z| Species::ion(z, self.kappa)).collect();
        species.push(Species::solvent());
        for (s, g) in species.iter_mut().zip(g_ref) {
            s.g_ref = g;
        }
        let compressibility = match self.bulk_modulus {
            Some(k) => Compressibility::BulkModulus(k),
            None => Compressibility::Incompressible,
        };
        Mixture::new(species, compressibility, self.lambda2, self.a2).map_err(|e| ScenarioError::Config(e.to_string()))
    }
}

/// Bulk composition of the charged species.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bulk {
    Fractions(Vec<f64>),
    /// Molarity in mol/L, applied to every charged species.
    Molarity(f64),
}

impl Bulk {
    pub fn fractions(&self, n_ions: usize) -> Vec<f64> {
        match self {
            Self::Fractions(y) => y.clone(),
            Self::Molarity(m) => vec![molarity_to_fraction(*m); n_ions],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Geometry {
    /// Interval `[0, length]`: biased electrode on the left, bulk reservoir on the right.
    Channel {
        length: f64,
        cells: usize,
        phi_right: f64,
        pressure: f64,
        bulk: Bulk,
    },
    /// Rectangle `[0, width] x [0, height]` between two baths (bottom and
    /// top) with surface-charge stripes on the right wall.
    Diode {
        width: f64,
        height: f64,
        nx: usize,
        ny: usize,
        bath: f64,
        pressure: f64,
        stripes: Vec<Band>,
        biases: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacitanceSpec {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSpec {
    pub cells: Vec<usize>,
    pub reference: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSpec {
    /// Solvation numbers of the full-model runs shown next to the classical model.
    pub kappas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureCase {
    pub name: String,
    pub charges: Vec<i32>,
    pub bulk: Vec<f64>,
}

fn log_ratio() -> SpeciesVariables {
    SpeciesVariables::LogRatio
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub kind: RunKind,
    #[serde(default)]
    pub bias: f64,
    #[serde(default)]
    pub bias_units: BiasUnits,
    #[serde(default = "log_ratio")]
    pub species_variables: SpeciesVariables,
    pub mixture: MixtureSpec,
    pub geometry: Geometry,
    #[serde(default)]
    pub solver: NewtonConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacitance: Option<CapacitanceSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compare: Option<CompareSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cases: Vec<MixtureCase>,
    /// Free-form remarks echoed into the manifest.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// A nodal profile with a label (model, case or bias).
#[derive(Debug, Clone)]
pub struct LabeledProfile {
    pub label: String,
    pub columns: Vec<String>,
    pub profile: FieldOnMesh,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub profiles: Vec<LabeledProfile>,
    pub capacitance: Option<CapacitanceCurve>,
    pub convergence: Option<ConvergenceTable>,
    pub reports: Vec<(String, SolveReport)>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let s: Self = toml::from_str(text).map_err(|e| ScenarioError::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Bias in thermal-voltage units.
    pub fn bias_thermal(&self) -> f64 {
        match self.bias_units {
            BiasUnits::Thermal => self.bias,
            BiasUnits::Volts => self.bias / PhysicalConstants::default().thermal_voltage(),
        }
    }

    pub fn mixture(&self) -> Result<Mixture, ScenarioError> {
        self.mixture.build()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Config(m));
        self.solver
            .validate()
            .map_err(|e| ScenarioError::Config(e.to_string()))?;
        if !self.bias.is_finite() {
            return bad("bias must be finite".into());
        }
        match self.kind {
            RunKind::Mixtures => {
                if self.cases.is_empty() {
                    return bad("mixtures runs need at least one case".into());
                }
                for case in &self.cases {
                    let spec = MixtureSpec {
                        charges: case.charges.clone(),
                        ..self.mixture.clone()
                    };
                    spec.build()?;
                    check_bulk(&case.charges, &case.bulk)
                        .map_err(|m| ScenarioError::Config(format!("{}: {m}", case.name)))?;
                }
            }
            _ => {
                self.mixture()?;
            }
        }
        match &self.geometry {
            Geometry::Channel {
                length, cells, bulk, ..
            } => {
                if !(*length > 0.0) || *cells == 0 {
                    return bad("channel needs a positive length and cell count".into());
                }
                if self.kind == RunKind::Diode2d {
                    return bad("diode2d runs need a diode geometry".into());
                }
                if self.kind != RunKind::Mixtures {
                    let charges = &self.mixture.charges;
                    check_bulk(charges, &bulk.fractions(charges.len())).map_err(ScenarioError::Config)?;
                }
            }
            Geometry::Diode {
                width,
                height,
                nx,
                ny,
                bath,
                biases,
                ..
            } => {
                if self.kind != RunKind::Diode2d {
                    return bad("the diode geometry is only used by diode2d runs".into());
                }
                if !(*width > 0.0 && *height > 0.0) || *nx == 0 || *ny == 0 || ny % 2 != 0 {
                    return bad("diode needs positive extents, nx > 0 and an even ny".into());
                }
                let charges = &self.mixture.charges;
                check_bulk(charges, &vec![*bath; charges.len()]).map_err(ScenarioError::Config)?;
                if biases.is_empty() {
                    return bad("diode2d runs need at least one bias".into());
                }
            }
        }
        let need = |present: bool, what: &str| {
            if present {
                Ok(())
            } else {
                bad(format!("{what} section missing"))
            }
        };
        match self.kind {
            RunKind::Capacitance => {
                let c = self
                    .capacitance
                    .as_ref()
                    .ok_or_else(|| ScenarioError::Config("capacitance section missing".into()))?;
                if !(c.step > 0.0 && c.max > c.min) || uniform_grid(c.min, c.max, c.step).len() < 3 {
                    return bad("capacitance grid needs min < max, step > 0 and at least 3 points".into());
                }
            }
            RunKind::Convergence => {
                let c = self
                    .convergence
                    .as_ref()
                    .ok_or_else(|| ScenarioError::Config("convergence section missing".into()))?;
                if c.cells.is_empty() || c.cells.windows(2).any(|w| w[1] <= w[0]) || c.cells.contains(&0) {
                    return bad("convergence cells must be positive and strictly increasing".into());
                }
                let largest = *c.cells.last().expect("non-empty");
                if c.reference < 8 * largest {
                    return bad(format!("reference {} must be at least 8 x {largest}", c.reference));
                }
                if c.cells.iter().any(|n| c.reference % n != 0) {
                    return bad("reference mesh must refine every study mesh".into());
                }
            }
            RunKind::CompareNp => need(self.compare.is_some(), "compare")?,
            _ => {}
        }
        Ok(())
    }

    /// Full-model problem on the scenario's geometry, with `cells` overriding
    /// the channel resolution when given.
    pub fn problem(&self, mixture: &Mixture, cells: Option<usize>) -> Result<Problem, ScenarioError> {
        let nc = mixture.n_ions();
        let (mesh, bcs) = match &self.geometry {
            Geometry::Channel {
                length,
                cells: default,
                phi_right,
                pressure,
                bulk,
            } => {
                let mesh = build_interval_mesh(0.0, *length, cells.unwrap_or(*default))
                    .map_err(|e| ScenarioError::Config(e.to_string()))?;
                (mesh, channel_bcs(*phi_right, *pressure, &bulk.fractions(nc)))
            }
            Geometry::Diode {
                width,
                height,
                nx,
                ny,
                bath,
                pressure,
                stripes,
                ..
            } => {
                let mesh = build_rectangle_mesh_with(*width, *height, *nx, *ny, DiagonalPattern::MirroredY)
                    .map_err(|e| ScenarioError::Config(e.to_string()))?;
                (mesh, diode_bcs(nc, *bath, *pressure, stripes))
            }
        };
        Problem::new(Arc::new(mesh), mixture.clone(), bcs, self.species_variables)
            .map_err(|e| ScenarioError::Config(e.to_string()))
    }

    /// Runs the scenario.
    pub fn execute(&self) -> Result<RunOutput, ScenarioError> {
        self.validate()?;
        match self.kind {
            RunKind::Profile => self.run_profile(),
            RunKind::Capacitance => self.run_capacitance(),
            RunKind::Convergence => self.run_convergence(),
            RunKind::CompareNp => self.run_compare(),
            RunKind::Diode2d => self.run_diode(),
            RunKind::Mixtures => self.run_mixtures(),
        }
    }

    fn solve(
        &self,
        mixture: &Mixture,
        cells: Option<usize>,
        stage: &str,
    ) -> Result<(FieldState, SolveReport), ScenarioError> {
        let problem = self.problem(mixture, cells)?;
        continuation_solve(self.bias_thermal(), &problem, &self.solver).map_err(|e| solver_error(stage, e))
    }

    fn run_profile(&self) -> Result<RunOutput, ScenarioError> {
        let mixture = self.mixture()?;
        let (state, report) = self.solve(&mixture, None, "profile solve")?;
        Ok(RunOutput {
            profiles: vec![labeled(&self.name, &state, &mixture)],
            reports: vec![(self.name.clone(), report)],
            ..Default::default()
        })
    }

    fn run_capacitance(&self) -> Result<RunOutput, ScenarioError> {
        let mixture = self.mixture()?;
        let spec = self.capacitance.as_ref().expect("validated");
        let problem = self.problem(&mixture, None)?;
        let grid = uniform_grid(spec.min, spec.max, spec.step);
        let curve = capacitance_sweep(&grid, &problem, &self.solver).map_err(|e| ScenarioError::Solver {
            stage: "capacitance sweep".into(),
            message: e.to_string(),
        })?;
        Ok(RunOutput {
            capacitance: Some(curve),
            ..Default::default()
        })
    }

    fn run_convergence(&self) -> Result<RunOutput, ScenarioError> {
        let mixture = self.mixture()?;
        let spec = self.convergence.as_ref().expect("validated");
        let mut fields = vec![("phi".to_string(), 0), ("p".to_string(), 1)];
        fields.extend((0..mixture.n_species()).map(|a| (format!("y{}", a + 1), 2 + a)));
        let table = convergence_study(&spec.cells, spec.reference, &fields, |n| {
            self.solve(&mixture, Some(n), "convergence solve")
                .map(|(s, _)| s.to_profile(&mixture))
                .map_err(|e| e.to_string())
        })
        .map_err(|e| ScenarioError::Solver {
            stage: "convergence study".into(),
            message: e.to_string(),
        })?;
        Ok(RunOutput {
            convergence: Some(table),
            ..Default::default()
        })
    }

    fn run_compare(&self) -> Result<RunOutput, ScenarioError> {
        let spec = self.compare.as_ref().expect("validated");
        let mut out = RunOutput::default();
        let runs: Vec<_> = spec
            .kappas
            .par_iter()
            .map(|&kappa| {
                let mut mixture = self.mixture()?;
                mixture
                    .set_kappa(kappa)
                    .map_err(|e| ScenarioError::Config(e.to_string()))?;
                let (state, report) = self.solve(&mixture, None, &format!("kappa = {kappa} solve"))?;
                Ok((format!("dgm-kappa{kappa}"), state, mixture, report))
            })
            .collect::<Result<_, ScenarioError>>()?;
        for (label, state, mixture, report) in runs {
            out.profiles.push(labeled(&label, &state, &mixture));
            out.reports.push((label, report));
        }
        let mixture = self.mixture()?;
        let (pb, charges) = self.pb_problem(&mixture)?;
        let sol = solve_poisson_boltzmann(&pb.with_bias(self.bias_thermal()), &self.solver).map_err(|e| {
            ScenarioError::Solver {
                stage: "Poisson-Boltzmann solve".into(),
                message: e.to_string(),
            }
        })?;
        out.profiles.push(LabeledProfile {
            label: "np".into(),
            columns: FieldState::profile_columns(mixture.n_species()),
            profile: sol.to_profile(&charges),
        });
        out.reports.push(("np".into(), sol.report));
        Ok(out)
    }

    /// The classical comparator on the channel geometry.
    pub fn pb_problem(&self, mixture: &Mixture) -> Result<(PbProblem, Vec<f64>), ScenarioError> {
        let Geometry::Channel {
            length,
            cells,
            phi_right,
            bulk,
            ..
        } = &self.geometry
        else {
            return Err(ScenarioError::Config(
                "the classical comparator needs a channel geometry".into(),
            ));
        };
        let mesh =
            Arc::new(build_interval_mesh(0.0, *length, *cells).map_err(|e| ScenarioError::Config(e.to_string()))?);
        let charges: Vec<f64> = mixture.charges().collect();
        let pb = PbProblem::new(
            mesh,
            mixture.lambda2(),
            charges.clone(),
            bulk.fractions(charges.len()),
            *phi_right,
            vec![
                (BoundaryTag::Left, BoundaryValue::Biased { offset: *phi_right }),
                (BoundaryTag::Right, BoundaryValue::Constant(*phi_right)),
            ],
        )
        .map_err(|e| ScenarioError::Config(e.to_string()))?;
        Ok((pb, charges))
    }

    fn run_diode(&self) -> Result<RunOutput, ScenarioError> {
        let Geometry::Diode { biases, .. } = &self.geometry else {
            unreachable!("validated")
        };
        let mixture = self.mixture()?;
        let problem = self.problem(&mixture, None)?;
        let runs: Vec<_> = biases
            .par_iter()
            .map(|&b| {
                continuation_solve(b, &problem, &self.solver)
                    .map(|(s, r)| (format!("bias_{b}"), s, r))
                    .map_err(|e| solver_error(&format!("diode solve at bias {b}"), e))
            })
            .collect::<Result<_, _>>()?;
        let mut out = RunOutput::default();
        for (label, state, report) in runs {
            out.profiles.push(labeled(&label, &state, &mixture));
            out.reports.push((label, report));
        }
        Ok(out)
    }

    fn run_mixtures(&self) -> Result<RunOutput, ScenarioError> {
        let runs: Vec<_> = self
            .cases
            .par_iter()
            .map(|case| {
                let (scenario, mixture) = self.case_scenario(case)?;
                let (state, report) = scenario.solve(&mixture, None, &format!("{} solve", case.name))?;
                Ok((case.name.clone(), state, mixture, report))
            })
            .collect::<Result<_, ScenarioError>>()?;
        let mut out = RunOutput::default();
        for (label, state, mixture, report) in runs {
            out.profiles.push(labeled(&label, &state, &mixture));
            out.reports.push((label, report));
        }
        Ok(out)
    }

    /// Single-profile scenario for one case of a mixtures run.
    pub fn case_scenario(&self, case: &MixtureCase) -> Result<(Scenario, Mixture), ScenarioError> {
        let mut s = self.clone();
        s.kind = RunKind::Profile;
        s.name = case.name.clone();
        s.cases.clear();
        s.mixture.charges = case.charges.clone();
        if let Geometry::Channel { bulk, .. } = &mut s.geometry {
            *bulk = Bulk::Fractions(case.bulk.clone());
        }
        let mixture = s.mixture()?;
        Ok((s, mixture))
    }
}

fn solver_error(stage: &str, e: impl std::fmt::Display) -> ScenarioError {
    ScenarioError::Solver {
        stage: stage.into(),
        message: e.to_string(),
    }
}

fn labeled(label: &str, state: &FieldState, mixture: &Mixture) -> LabeledProfile {
    LabeledProfile {
        label: label.into(),
        columns: FieldState::profile_columns(mixture.n_species()),
        profile: state.to_profile(mixture),
    }
}

fn check_bulk(charges: &[i32], bulk: &[f64]) -> Result<(), String> {
    if bulk.len() != charges.len() {
        return Err(format!(
            "{} bulk fractions for {} charged species",
            bulk.len(),
            charges.len()
        ));
    }
    if bulk.iter().any(|&y| !(y > 0.0 && y < 1.0)) || bulk.iter().sum::<f64>() >= 1.0 {
        return Err("bulk fractions must be positive and leave room for the solvent".into());
    }
    let net: f64 = charges.iter().zip(bulk).map(|(&z, y)| f64::from(z) * y).sum();
    if net.abs() > 1e-12 {
        return Err(format!("bulk is not electroneutral (sum z y = {net:e})"));
    }
    Ok(())
}

/// Left electrode at `phi_right + bias`; bulk potential, pressure and
/// composition on the right.
pub fn channel_bcs(phi_right: f64, pressure: f64, bulk: &[f64]) -> BoundaryConditionSet {
    use BoundaryTag::*;
    let mut bcs = BoundaryConditionSet::default()
        .dirichlet(
            Field::Phi,
            DirichletTarget::Tag(Left),
            BoundaryValue::Biased { offset: phi_right },
        )
        .dirichlet(
            Field::Phi,
            DirichletTarget::Tag(Right),
            BoundaryValue::Constant(phi_right),
        )
        .dirichlet(
            Field::Pressure,
            DirichletTarget::Tag(Right),
            BoundaryValue::Constant(pressure),
        );
    for (a, &y) in bulk.iter().enumerate() {
        bcs = bcs.dirichlet(
            Field::Species(a),
            DirichletTarget::Tag(Right),
            BoundaryValue::Constant(y),
        );
    }
    bcs
}

/// Baths at bottom (potential 0) and top (potential = bias), surface-charge
/// stripes on the right wall, insulating left wall, pressure fixed at the
/// bottom-left corner.
pub fn diode_bcs(n_ions: usize, bath: f64, pressure: f64, stripes: &[Band]) -> BoundaryConditionSet {
    use BoundaryTag::*;
    let mut bcs = BoundaryConditionSet::default()
        .dirichlet(Field::Phi, DirichletTarget::Tag(Bottom), BoundaryValue::Constant(0.0))
        .dirichlet(
            Field::Phi,
            DirichletTarget::Tag(Top),
            BoundaryValue::Biased { offset: 0.0 },
        )
        .dirichlet(
            Field::Pressure,
            DirichletTarget::Point([0.0, 0.0]),
            BoundaryValue::Constant(pressure),
        )
        .neumann(
            Field::Phi,
            Right,
            NeumannData::Bands {
                axis: 1,
                bands: stripes.to_vec(),
            },
        );
    for a in 0..n_ions {
        for tag in [Bottom, Top] {
            bcs = bcs.dirichlet(
                Field::Species(a),
                DirichletTarget::Tag(tag),
                BoundaryValue::Constant(bath),
            );
        }
    }
    bcs
}

/// Debye length and pressure scale of the reference electrolyte.
pub const LAMBDA2: f64 = 8.553e-6;
pub const A2: f64 = 7.5412e-4;

fn ternary(kappa: f64) -> MixtureSpec {
    MixtureSpec {
        charges: vec![-1, 1],
        kappa,
        g_ref: None,
        bulk_modulus: None,
        lambda2: LAMBDA2,
        a2: A2,
    }
}

fn channel(cells: usize, bulk: Bulk) -> Geometry {
    Geometry::Channel {
        length: 1.0,
        cells,
        phi_right: 0.0,
        pressure: 0.0,
        bulk,
    }
}

fn base(name: &str, kind: RunKind, bias: f64, mixture: MixtureSpec, geometry: Geometry) -> Scenario {
    Scenario {
        name: name.into(),
        kind,
        bias,
        bias_units: BiasUnits::Thermal,
        species_variables: SpeciesVariables::LogRatio,
        mixture,
        geometry,
        solver: NewtonConfig::default(),
        capacitance: None,
        convergence: None,
        compare: None,
        cases: Vec::new(),
        notes: Vec::new(),
    }
}

/// The four many-species cases.
pub fn mixture_cases() -> Vec<MixtureCase> {
    let case = |name: &str, charges: &[i32], bulk: &[f64]| MixtureCase {
        name: name.into(),
        charges: charges.to_vec(),
        bulk: bulk.to_vec(),
    };
    let d = 1.0 / 23.0;
    vec![
        case("mixture-caseA", &[-1, 1, 2], &[3.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0]),
        case("mixture-caseB", &[-2, -1, 1], &[1.0 / 6.0, 1.0 / 6.0, 3.0 / 6.0]),
        case("mixture-caseC", &[-2, -1, 1, 2], &[0.2; 4]),
        case("mixture-caseD", &[-4, -3, -2, -1, 1], &[d, d, d, d, 10.0 * d]),
    ]
}

const PRESETS: [&str; 11] = [
    "ternary-default",
    "validation",
    "ternary-np-compare",
    "capacitance",
    "ternary-compressible",
    "mixture-caseA",
    "mixture-caseB",
    "mixture-caseC",
    "mixture-caseD",
    "mixtures",
    "diode",
];

pub fn preset_names() -> Vec<String> {
    PRESETS.iter().map(|s| s.to_string()).collect()
}

/// Mesh resolution of the 1D presets.
const CHANNEL_CELLS: usize = 2048;

pub fn load_preset(name: &str) -> Result<Scenario, ScenarioError> {
    let third = 1.0 / 3.0;
    let s = match name {
        "ternary-default" => {
            let mut s = base(
                name,
                RunKind::Profile,
                6.0,
                ternary(0.0),
                channel(CHANNEL_CELLS, Bulk::Fractions(vec![third, third])),
            );
            s.convergence = Some(ConvergenceSpec {
                cells: vec![128, 256, 512, 1024, 2048],
                reference: 65536,
            });
            s
        }
        "validation" => {
            let mixture = MixtureSpec {
                lambda2: 2.4e-6,
                a2: 7.5e-4,
                ..ternary(8.0)
            };
            let mut s = base(
                name,
                RunKind::CompareNp,
                0.6,
                mixture,
                channel(8192, Bulk::Molarity(0.5)),
            );
            s.bias_units = BiasUnits::Volts;
            s.compare = Some(CompareSpec { kappas: vec![0.0, 8.0] });
            s.notes
                .push("bias given in volts; use thermal units for the literal reading 0.6".into());
            s
        }
        "ternary-np-compare" => {
            let mut s = base(
                name,
                RunKind::CompareNp,
                10.0,
                ternary(0.0),
                channel(CHANNEL_CELLS, Bulk::Fractions(vec![third, third])),
            );
            s.compare = Some(CompareSpec { kappas: vec![0.0] });
            s
        }
        "capacitance" => {
            let mut s = base(
                name,
                RunKind::Capacitance,
                0.0,
                ternary(0.0),
                channel(1024, Bulk::Molarity(0.01)),
            );
            s.capacitance = Some(CapacitanceSpec {
                min: -10.0,
                max: 10.0,
                step: 0.1,
            });
            s
        }
        "ternary-compressible" => {
            let mixture = MixtureSpec {
                bulk_modulus: Some(1e4),
                ..ternary(0.0)
            };
            base(
                name,
                RunKind::Profile,
                4.0,
                mixture,
                channel(CHANNEL_CELLS, Bulk::Fractions(vec![third, third])),
            )
        }
        "mixtures" => {
            let mut s = base(
                name,
                RunKind::Mixtures,
                10.0,
                ternary(0.0),
                channel(CHANNEL_CELLS, Bulk::Fractions(vec![third, third])),
            );
            s.cases = mixture_cases();
            s
        }
        "diode" => {
            let sigma = 350.0;
            let geometry = Geometry::Diode {
                width: 0.02,
                height: 0.1,
                nx: 20,
                ny: 100,
                bath: 0.01,
                pressure: 0.0,
                stripes: vec![
                    Band {
                        lo: 0.025,
                        hi: 0.05,
                        value: -sigma,
                    },
                    Band {
                        lo: 0.05,
                        hi: 0.075,
                        value: sigma,
                    },
                ],
                biases: vec![-10.0, 0.0, 10.0],
            };
            let mut s = base(name, RunKind::Diode2d, 0.0, ternary(5.0), geometry);
            s.notes
                .push("left wall (x = 0): insulating for the potential, no species flux".into());
            s.notes
                .push("pressure: homogeneous Neumann everywhere, fixed to 0 at the corner (0, 0)".into());
            s
        }
        _ => {
            if let Some(case) = mixture_cases().into_iter().find(|c| c.name == name) {
                let mixtures = load_preset("mixtures")?;
                let (s, _) = mixtures.case_scenario(&case)?;
                return Ok(s);
            }
            return Err(ScenarioError::UnknownPreset {
                name: name.into(),
                valid: preset_names(),
            });
        }
    };
    Ok(s)
}

/// Coordinates of a profile's nodes, padded to two dimensions.
pub fn node_coordinates(mesh: &Mesh, node: usize) -> [f64; 2] {
    let x = mesh.node(node);
    [x[0], x.get(1).copied().unwrap_or(0.0)]
}
