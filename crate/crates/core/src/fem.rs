//! P1 finite element discretization of the stationary electrolyte equations.
//!
//! Unknowns per node are interleaved as `[phi, p, u_1, .., u_{N-1}]`, where the
//! species unknowns `u` are either the mole fractions of the charged species
//! or the log-ratios `ln(y_a / y_N)` (see [`SpeciesVariables`]). Both choices
//! discretize the same weak form: for every test function
//!
//! ```text
//! (grad phi, grad v) - <h_phi, v> - (n^F / lambda^2, v)             = 0
//! (grad p + n^F grad phi / a^2, grad v) - <h_p, v>                   = 0
//! (grad w_a, grad v) - <h_a, v>,   w_a = mu_a - mu_N + z_a phi       = 0
//! ```
//!
//! with coefficients evaluated at quadrature points from interpolated nodal
//! unknowns. The Jacobian is the exact derivative of the discrete residual.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use smallvec::{smallvec, SmallVec};
use thiserror::Error;

use crate::linalg::{SparseMatrix, SparsityPattern};
use crate::mesh::{BoundaryTag, FieldOnMesh, Mesh};
use crate::physics::{Mixture, PhysicsError, SpeciesVec, StateSample};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FemError {
    #[error("inadmissible state in cell {cell}: {source}")]
    Infeasible { cell: usize, source: PhysicsError },
    #[error("inadmissible boundary data at node {node}: {source}")]
    InvalidBoundaryValue { node: usize, source: PhysicsError },
    #[error("boundary tag `{}` does not exist on this mesh", .0.name())]
    UnknownTag(BoundaryTag),
    #[error("no mesh node within tolerance of pin point {0:?}")]
    PinNotOnNode(Vec<f64>),
    #[error("field {field} has both Dirichlet and Neumann data on `{}`", .tag.name())]
    OverlappingConditions { field: String, tag: BoundaryTag },
    #[error("pressure needs at least one Dirichlet value")]
    PressureUnpinned,
    #[error("invalid boundary configuration: {0}")]
    Config(String),
    #[error("state has {got} values, expected {expected}")]
    SizeMismatch { expected: usize, got: usize },
}

/// One of the `N + 1` unknown fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Phi,
    Pressure,
    /// Charged species by index, `0..N-1`.
    Species(usize),
}

impl Field {
    pub fn index(self) -> usize {
        match self {
            Self::Phi => 0,
            Self::Pressure => 1,
            Self::Species(a) => 2 + a,
        }
    }

    fn label(self) -> String {
        match self {
            Self::Phi => "phi".into(),
            Self::Pressure => "p".into(),
            Self::Species(a) => format!("y{}", a + 1),
        }
    }
}

/// Parametrization of the charged-species unknowns.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpeciesVariables {
    /// Mole fractions `y_1..y_{N-1}`; the solvent is `1 - sum(y)`.
    #[default]
    MoleFraction,
    /// `s_a = ln(y_a / y_N)`. Admissible for any real values, so fractions far
    /// below machine precision remain representable.
    LogRatio,
}

/// Node-interleaved degree-of-freedom layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DofMap {
    pub n_nodes: usize,
    pub n_fields: usize,
}

impl DofMap {
    pub fn new(n_nodes: usize, n_species: usize) -> Self {
        Self {
            n_nodes,
            n_fields: n_species + 1,
        }
    }

    pub fn n_dofs(&self) -> usize {
        self.n_nodes * self.n_fields
    }

    #[inline]
    pub fn dof(&self, node: usize, field: Field) -> usize {
        node * self.n_fields + field.index()
    }

    pub fn node_and_field(&self, dof: usize) -> (usize, usize) {
        (dof / self.n_fields, dof % self.n_fields)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DirichletTarget {
    Tag(BoundaryTag),
    /// The mesh node at this position.
    Point([f64; 2]),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryValue {
    Constant(f64),
    /// `offset + bias`, where the bias is the continuation parameter.
    Biased {
        offset: f64,
    },
}

impl BoundaryValue {
    pub fn at(self, bias: f64) -> f64 {
        match self {
            Self::Constant(v) => v,
            Self::Biased { offset } => offset + bias,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
    pub value: f64,
}

/// Neumann data `h`, either constant or piecewise constant along one axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeumannData {
    Constant(f64),
    /// The first band with `lo <= x[axis] <= hi` applies; zero elsewhere.
    Bands {
        axis: usize,
        bands: Vec<Band>,
    },
}

impl NeumannData {
    pub fn at(&self, x: &[f64]) -> f64 {
        match self {
            Self::Constant(v) => *v,
            Self::Bands { axis, bands } => {
                let t = x[*axis];
                bands.iter().find(|b| b.lo <= t && t <= b.hi).map_or(0.0, |b| b.value)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletCondition {
    pub field: Field,
    pub target: DirichletTarget,
    pub value: BoundaryValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeumannCondition {
    pub field: Field,
    pub tag: BoundaryTag,
    pub data: NeumannData,
}

/// Boundary data for all fields. Boundary parts without any condition carry
/// homogeneous Neumann data.
///
/// Dirichlet values of species are mole fractions. When several conditions
/// constrain the same node and field, the first one listed wins.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConditionSet {
    pub dirichlet: Vec<DirichletCondition>,
    pub neumann: Vec<NeumannCondition>,
    /// Current value of the continuation parameter used by [`BoundaryValue::Biased`].
    pub bias: f64,
}

impl BoundaryConditionSet {
    pub fn dirichlet(mut self, field: Field, target: DirichletTarget, value: BoundaryValue) -> Self {
        self.dirichlet.push(DirichletCondition { field, target, value });
        self
    }

    pub fn neumann(mut self, field: Field, tag: BoundaryTag, data: NeumannData) -> Self {
        self.neumann.push(NeumannCondition { field, tag, data });
        self
    }
}

/// Unknowns of the discrete problem, node-interleaved.
#[derive(Debug, Clone)]
pub struct FieldState {
    mesh: Arc<Mesh>,
    dofs: DofMap,
    variables: SpeciesVariables,
    values: Vec<f64>,
}

impl FieldState {
    pub fn new(
        mesh: Arc<Mesh>,
        n_species: usize,
        variables: SpeciesVariables,
        values: Vec<f64>,
    ) -> Result<Self, FemError> {
        let dofs = DofMap::new(mesh.n_nodes(), n_species);
        if values.len() != dofs.n_dofs() {
            return Err(FemError::SizeMismatch {
                expected: dofs.n_dofs(),
                got: values.len(),
            });
        }
        Ok(Self {
            mesh,
            dofs,
            variables,
            values,
        })
    }

    /// Builds a state from physical nodal values (`y` holds the N-1 charged fractions per node).
    pub fn from_physical(
        mesh: Arc<Mesh>,
        variables: SpeciesVariables,
        phi: impl Fn(usize) -> f64,
        p: impl Fn(usize) -> f64,
        y: impl Fn(usize) -> SpeciesVec,
    ) -> Result<Self, FemError> {
        let n = mesh.n_nodes();
        let mut values = Vec::new();
        let mut n_species = 0;
        for node in 0..n {
            let fractions = y(node);
            n_species = fractions.len() + 1;
            values.push(phi(node));
            values.push(p(node));
            values.extend(species_unknowns(variables, &fractions, node)?);
        }
        Self::new(mesh, n_species, variables, values)
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn dofs(&self) -> DofMap {
        self.dofs
    }

    pub fn variables(&self) -> SpeciesVariables {
        self.variables
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn n_species(&self) -> usize {
        self.dofs.n_fields - 1
    }

    pub fn get(&self, node: usize, field: Field) -> f64 {
        self.values[self.dofs.dof(node, field)]
    }

    pub fn phi(&self, node: usize) -> f64 {
        self.get(node, Field::Phi)
    }

    pub fn pressure(&self, node: usize) -> f64 {
        self.get(node, Field::Pressure)
    }

    /// Species unknowns at a node, in the state's parametrization.
    pub fn species_unknowns(&self, node: usize) -> &[f64] {
        let start = self.dofs.dof(node, Field::Species(0));
        &self.values[start..start + self.n_species() - 1]
    }

    /// All N mole fractions at a node, solvent last.
    pub fn fractions(&self, node: usize) -> SpeciesVec {
        fractions_from_unknowns(self.variables, self.species_unknowns(node))
    }

    /// Re-expresses the state in another species parametrization.
    pub fn convert(&self, variables: SpeciesVariables) -> Result<Self, FemError> {
        if variables == self.variables {
            return Ok(self.clone());
        }
        let nc = self.n_species() - 1;
        Self::from_physical(
            self.mesh.clone(),
            variables,
            |i| self.phi(i),
            |i| self.pressure(i),
            |i| self.fractions(i)[..nc].iter().copied().collect(),
        )
    }

    /// Physical nodal profile with components `[phi, p, y_1..y_N, n^F, n]`.
    pub fn to_profile(&self, mixture: &Mixture) -> FieldOnMesh {
        let n = self.mesh.n_nodes();
        let k = self.n_species() + 4;
        let mut values = Vec::with_capacity(n * k);
        for node in 0..n {
            let p = self.pressure(node);
            let y = self.fractions(node);
            let density = mixture.number_density_unchecked(p);
            values.push(self.phi(node));
            values.push(p);
            values.extend_from_slice(&y);
            values.push(density * mixture.mean_charge(&y));
            values.push(density);
        }
        FieldOnMesh::new(self.mesh.clone(), k, values).expect("consistent profile size")
    }

    /// Profile column names matching [`FieldState::to_profile`].
    pub fn profile_columns(n_species: usize) -> Vec<String> {
        let mut cols = vec!["phi".to_string(), "p".to_string()];
        cols.extend((1..=n_species).map(|a| format!("y{a}")));
        cols.extend(["nF".to_string(), "n".to_string()]);
        cols
    }
}

fn species_unknowns(variables: SpeciesVariables, fractions: &[f64], node: usize) -> Result<SpeciesVec, FemError> {
    let solvent = 1.0 - fractions.iter().sum::<f64>();
    let bad = |species: usize, value: f64| FemError::InvalidBoundaryValue {
        node,
        source: PhysicsError::MoleFraction {
            species,
            value,
            floor: 0.0,
        },
    };
    if let Some(a) = fractions.iter().position(|&y| !(y > 0.0 && y < 1.0)) {
        return Err(bad(a, fractions[a]));
    }
    if !(solvent > 0.0 && solvent < 1.0) {
        return Err(bad(fractions.len(), solvent));
    }
    Ok(match variables {
        SpeciesVariables::MoleFraction => fractions.iter().copied().collect(),
        SpeciesVariables::LogRatio => fractions.iter().map(|&y| (y / solvent).ln()).collect(),
    })
}

/// All N fractions (solvent last) from the species unknowns.
pub fn fractions_from_unknowns(variables: SpeciesVariables, u: &[f64]) -> SpeciesVec {
    match variables {
        SpeciesVariables::MoleFraction => {
            let mut y: SpeciesVec = u.iter().copied().collect();
            y.push(1.0 - u.iter().sum::<f64>());
            y
        }
        SpeciesVariables::LogRatio => {
            // softmax over (u_1, .., u_{N-1}, 0), shifted for overflow safety
            let shift = u.iter().copied().fold(0.0, f64::max);
            let mut y: SpeciesVec = u.iter().map(|&s| (s - shift).exp()).collect();
            y.push((-shift).exp());
            let total: f64 = y.iter().sum();
            y.iter_mut().for_each(|v| *v /= total);
            y
        }
    }
}

/// Quadrature rule on a cell: barycentric point coordinates and weights.
/// Two-point Gauss on intervals, edge midpoints on triangles.
pub fn cell_quadrature(mesh: &Mesh, cell: usize) -> SmallVec<[([f64; 3], f64); 3]> {
    let measure = mesh.cell_measure(cell);
    match mesh.dim() {
        1 => {
            let g = 0.5 / 3f64.sqrt();
            smallvec![
                ([0.5 + g, 0.5 - g, 0.0], 0.5 * measure),
                ([0.5 - g, 0.5 + g, 0.0], 0.5 * measure)
            ]
        }
        _ => smallvec![
            ([0.5, 0.5, 0.0], measure / 3.0),
            ([0.0, 0.5, 0.5], measure / 3.0),
            ([0.5, 0.0, 0.5], measure / 3.0),
        ],
    }
}

type FacetPoint = ([f64; 2], [f64; 2], f64);

/// Quadrature on a boundary facet: `(basis values on the facet nodes, point, weight)`.
fn facet_quadrature(mesh: &Mesh, nodes: &[usize]) -> SmallVec<[FacetPoint; 2]> {
    match mesh.dim() {
        1 => {
            let x = mesh.node(nodes[0])[0];
            smallvec![([1.0, 0.0], [x, 0.0], 1.0)]
        }
        _ => {
            let (a, b) = (mesh.node(nodes[0]), mesh.node(nodes[1]));
            let length = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
            let g = 0.5 / 3f64.sqrt();
            [0.5 - g, 0.5 + g]
                .into_iter()
                .map(|t| {
                    let x = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
                    ([1.0 - t, t], x, 0.5 * length)
                })
                .collect()
        }
    }
}

/// Composition at a point: fractions and the derivatives the assembly needs.
///
/// `chem[a][b]` is `d(ln y_a - ln y_N)/du_b`, `dchem[a][b][c]` its derivative
/// with respect to `u_c`, and `dy[a][c] = d y_a / d u_c`.
struct Composition {
    y: SpeciesVec,
    chem: Vec<SpeciesVec>,
    dchem: Option<Vec<Vec<SpeciesVec>>>,
    dy: Option<Vec<SpeciesVec>>,
}

fn composition(
    variables: SpeciesVariables,
    mixture: &Mixture,
    phi: f64,
    p: f64,
    u: &[f64],
) -> Result<Composition, PhysicsError> {
    let nc = u.len();
    match variables {
        SpeciesVariables::MoleFraction => {
            let sample = StateSample { phi, p, y: u };
            sample.check(mixture)?;
            let chem = (0..nc)
                .map(|a| mixture.flux_potential(&sample, a).map(|f| f.dw_dy))
                .collect::<Result<Vec<_>, _>>()?;
            let solvent = sample.solvent_fraction();
            let inv_solvent2 = 1.0 / (solvent * solvent);
            let dchem = (0..nc)
                .map(|a| {
                    (0..nc)
                        .map(|b| {
                            (0..nc)
                                .map(|c| {
                                    let own = if a == b && b == c { -1.0 / (u[a] * u[a]) } else { 0.0 };
                                    own + inv_solvent2
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect();
            let mut y: SpeciesVec = u.iter().copied().collect();
            y.push(solvent);
            Ok(Composition {
                y,
                chem,
                dchem: Some(dchem),
                dy: None,
            })
        }
        SpeciesVariables::LogRatio => {
            if u.iter().any(|v| !v.is_finite()) {
                return Err(PhysicsError::MoleFraction {
                    species: 0,
                    value: f64::NAN,
                    floor: 0.0,
                });
            }
            let y = fractions_from_unknowns(variables, u);
            let chem = (0..nc)
                .map(|a| (0..nc).map(|b| if a == b { 1.0 } else { 0.0 }).collect())
                .collect();
            let dy = (0..nc)
                .map(|a| {
                    (0..nc)
                        .map(|c| y[a] * (if a == c { 1.0 } else { 0.0 } - y[c]))
                        .collect()
                })
                .collect();
            Ok(Composition {
                y,
                chem,
                dchem: None,
                dy: Some(dy),
            })
        }
    }
}

/// Residual vector and (optionally) Jacobian of the discrete system.
#[derive(Debug, Clone)]
pub struct AssembledSystem {
    pub residual: Vec<f64>,
    pub jacobian: Option<SparseMatrix>,
}

/// Dirichlet constraint resolved to a degree of freedom, value in the
/// state's parametrization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constraint {
    pub dof: usize,
    pub value: f64,
}

/// A discrete boundary value problem: mesh, mixture, boundary data and the
/// chosen species parametrization.
#[derive(Debug, Clone)]
pub struct Problem {
    mesh: Arc<Mesh>,
    mixture: Mixture,
    bcs: BoundaryConditionSet,
    variables: SpeciesVariables,
    dofs: DofMap,
    pattern: Arc<SparsityPattern>,
    constrained: Arc<Vec<(usize, Field, usize)>>,
}

impl Problem {
    pub fn new(
        mesh: Arc<Mesh>,
        mixture: Mixture,
        bcs: BoundaryConditionSet,
        variables: SpeciesVariables,
    ) -> Result<Self, FemError> {
        let dofs = DofMap::new(mesh.n_nodes(), mixture.n_species());
        validate_conditions(&mesh, &mixture, &bcs)?;
        let constrained = Arc::new(resolve_dirichlet_nodes(&mesh, &bcs)?);
        if !constrained.iter().any(|(_, f, _)| *f == Field::Pressure) {
            return Err(FemError::PressureUnpinned);
        }
        if variables == SpeciesVariables::LogRatio {
            check_species_dirichlet_complete(&constrained, mixture.n_ions())?;
        }
        let pattern = Arc::new(build_pattern(&mesh, dofs));
        let problem = Self {
            mesh,
            mixture,
            bcs,
            variables,
            dofs,
            pattern,
            constrained,
        };
        problem.constraints()?;
        Ok(problem)
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn mixture(&self) -> &Mixture {
        &self.mixture
    }

    pub fn bcs(&self) -> &BoundaryConditionSet {
        &self.bcs
    }

    pub fn variables(&self) -> SpeciesVariables {
        self.variables
    }

    pub fn dofs(&self) -> DofMap {
        self.dofs
    }

    pub fn bias(&self) -> f64 {
        self.bcs.bias
    }

    /// Same problem with a different continuation parameter.
    pub fn with_bias(&self, bias: f64) -> Self {
        let mut p = self.clone();
        p.bcs.bias = bias;
        p
    }

    /// Same problem with another species parametrization.
    pub fn with_variables(&self, variables: SpeciesVariables) -> Result<Self, FemError> {
        Self::new(self.mesh.clone(), self.mixture.clone(), self.bcs.clone(), variables)
    }

    /// Dirichlet constraints at the current bias, in the problem's parametrization.
    pub fn constraints(&self) -> Result<Vec<Constraint>, FemError> {
        let bias = self.bcs.bias;
        let nc = self.mixture.n_ions();
        let mut out = Vec::with_capacity(self.constrained.len());
        let mut species_at_node: std::collections::BTreeMap<usize, SpeciesVec> = Default::default();
        for &(node, field, cond) in self.constrained.iter() {
            let value = self.bcs.dirichlet[cond].value.at(bias);
            match field {
                Field::Species(a) => {
                    species_at_node.entry(node).or_insert_with(|| smallvec![f64::NAN; nc])[a] = value;
                }
                _ => out.push(Constraint {
                    dof: self.dofs.dof(node, field),
                    value,
                }),
            }
        }
        for (node, fractions) in species_at_node {
            if fractions.iter().all(|v| !v.is_nan()) {
                let u = species_unknowns(self.variables, &fractions, node)?;
                for (a, value) in u.into_iter().enumerate() {
                    out.push(Constraint {
                        dof: self.dofs.dof(node, Field::Species(a)),
                        value,
                    });
                }
                continue;
            }
            // partially constrained node, only possible with mole-fraction unknowns
            for (a, &value) in fractions.iter().enumerate().filter(|(_, v)| !v.is_nan()) {
                if !(value > 0.0 && value < 1.0) {
                    return Err(FemError::InvalidBoundaryValue {
                        node,
                        source: PhysicsError::MoleFraction {
                            species: a,
                            value,
                            floor: 0.0,
                        },
                    });
                }
                out.push(Constraint {
                    dof: self.dofs.dof(node, Field::Species(a)),
                    value,
                });
            }
        }
        Ok(out)
    }

    /// Writes the Dirichlet values into `state`.
    pub fn impose_constraints(&self, state: &mut FieldState) -> Result<(), FemError> {
        for c in self.constraints()? {
            state.values[c.dof] = c.value;
        }
        Ok(())
    }

    fn check_state(&self, state: &FieldState) -> Result<(), FemError> {
        if state.values.len() != self.dofs.n_dofs() || state.variables != self.variables {
            return Err(FemError::SizeMismatch {
                expected: self.dofs.n_dofs(),
                got: state.values.len(),
            });
        }
        Ok(())
    }

    /// Residual and Jacobian with boundary conditions applied.
    pub fn residual_and_jacobian(&self, state: &FieldState) -> Result<AssembledSystem, FemError> {
        let mut sys = assemble_system(state, self, true)?;
        apply_boundary_conditions(&mut sys, state, self)?;
        Ok(sys)
    }

    /// Residual with boundary conditions applied.
    pub fn residual(&self, state: &FieldState) -> Result<Vec<f64>, FemError> {
        let mut sys = assemble_system(state, self, false)?;
        apply_boundary_conditions(&mut sys, state, self)?;
        Ok(sys.residual)
    }

    /// Default initial guess: harmonic lifting of the potential's Dirichlet
    /// data, pressure equal to its first Dirichlet value and species equal to
    /// their first Dirichlet values.
    pub fn initial_guess(&self) -> Result<FieldState, FemError> {
        let phi = harmonic_lifting(&self.mesh, &self.constraints()?, self.dofs)?;
        let first = |field: Field| {
            self.bcs
                .dirichlet
                .iter()
                .find(|c| c.field == field)
                .map(|c| c.value.at(self.bcs.bias))
        };
        let p0 = first(Field::Pressure).ok_or(FemError::PressureUnpinned)?;
        let nc = self.mixture.n_ions();
        let y0: SpeciesVec = (0..nc)
            .map(|a| {
                first(Field::Species(a))
                    .ok_or_else(|| FemError::Config(format!("species {} has no Dirichlet value", a + 1)))
            })
            .collect::<Result<_, _>>()?;
        let mut state =
            FieldState::from_physical(self.mesh.clone(), self.variables, |i| phi[i], |_| p0, |_| y0.clone())?;
        self.impose_constraints(&mut state)?;
        Ok(state)
    }
}

fn validate_conditions(mesh: &Mesh, mixture: &Mixture, bcs: &BoundaryConditionSet) -> Result<(), FemError> {
    let n_ions = mixture.n_ions();
    let check_field = |f: Field| match f {
        Field::Species(a) if a >= n_ions => Err(FemError::Config(format!(
            "species index {} exceeds {} charged species",
            a + 1,
            n_ions
        ))),
        _ => Ok(()),
    };
    for c in &bcs.dirichlet {
        check_field(c.field)?;
        if let DirichletTarget::Tag(tag) = c.target {
            if !mesh.has_tag(tag) {
                return Err(FemError::UnknownTag(tag));
            }
        }
    }
    for c in &bcs.neumann {
        check_field(c.field)?;
        if !mesh.has_tag(c.tag) {
            return Err(FemError::UnknownTag(c.tag));
        }
        if let NeumannData::Bands { axis, .. } = c.data {
            if axis >= mesh.dim() {
                return Err(FemError::Config(format!("band axis {axis} exceeds mesh dimension")));
            }
        }
        let overlap = bcs
            .dirichlet
            .iter()
            .any(|d| d.field == c.field && d.target == DirichletTarget::Tag(c.tag));
        if overlap {
            return Err(FemError::OverlappingConditions {
                field: c.field.label(),
                tag: c.tag,
            });
        }
    }
    Ok(())
}

/// `(node, field, condition index)` for every constrained degree of freedom.
fn resolve_dirichlet_nodes(mesh: &Mesh, bcs: &BoundaryConditionSet) -> Result<Vec<(usize, Field, usize)>, FemError> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for (k, c) in bcs.dirichlet.iter().enumerate() {
        let nodes = match c.target {
            DirichletTarget::Tag(tag) => mesh.tagged_nodes(tag),
            DirichletTarget::Point(x) => vec![nearest_node(mesh, &x[..mesh.dim()])?],
        };
        for node in nodes {
            if seen.insert((node, c.field)) {
                out.push((node, c.field, k));
            }
        }
    }
    Ok(out)
}

fn nearest_node(mesh: &Mesh, x: &[f64]) -> Result<usize, FemError> {
    let (lo, hi) = mesh.bounds();
    let tol = 1e-9 * (0..mesh.dim()).map(|d| hi[d] - lo[d]).fold(0.0, f64::max);
    (0..mesh.n_nodes())
        .map(|i| {
            (
                i,
                mesh.node(i)
                    .iter()
                    .zip(x)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt(),
            )
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .filter(|(_, d)| *d <= tol)
        .map(|(i, _)| i)
        .ok_or_else(|| FemError::PinNotOnNode(x.to_vec()))
}

fn check_species_dirichlet_complete(constrained: &[(usize, Field, usize)], n_ions: usize) -> Result<(), FemError> {
    let mut counts = std::collections::HashMap::new();
    for (node, field, _) in constrained {
        if let Field::Species(_) = field {
            *counts.entry(*node).or_insert(0usize) += 1;
        }
    }
    match counts.into_iter().find(|(_, n)| *n != n_ions) {
        Some((node, _)) => Err(FemError::Config(format!(
            "log-ratio unknowns need Dirichlet values for all species together (node {node})"
        ))),
        None => Ok(()),
    }
}

pub(crate) fn build_pattern(mesh: &Mesh, dofs: DofMap) -> SparsityPattern {
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); mesh.n_nodes()];
    for c in 0..mesh.n_cells() {
        let nodes = mesh.cell(c);
        for &a in nodes {
            adjacency[a].extend_from_slice(nodes);
        }
    }
    let nf = dofs.n_fields;
    let mut columns = Vec::with_capacity(dofs.n_dofs());
    for adj in &mut adjacency {
        adj.sort_unstable();
        adj.dedup();
        let rows: Vec<usize> = adj.iter().flat_map(|&a| (0..nf).map(move |f| a * nf + f)).collect();
        for _ in 0..nf {
            columns.push(rows.clone());
        }
    }
    SparsityPattern::from_columns(dofs.n_dofs(), columns)
}

/// Solves the Laplace equation for the potential with its Dirichlet data.
pub(crate) fn harmonic_lifting(mesh: &Mesh, constraints: &[Constraint], dofs: DofMap) -> Result<Vec<f64>, FemError> {
    let n = mesh.n_nodes();
    let mut fixed = vec![None; n];
    for c in constraints {
        let (node, field) = dofs.node_and_field(c.dof);
        if field == Field::Phi.index() {
            fixed[node] = Some(c.value);
        }
    }
    if fixed.iter().all(Option::is_none) {
        return Ok(vec![0.0; n]);
    }
    let mut triplets = Vec::new();
    let mut rhs = vec![0.0; n];
    for c in 0..mesh.n_cells() {
        let nodes = mesh.cell(c);
        let grads = mesh.basis_gradients(c);
        let measure = mesh.cell_measure(c);
        for (i, &a) in nodes.iter().enumerate() {
            if fixed[a].is_some() {
                continue;
            }
            for (j, &b) in nodes.iter().enumerate() {
                let k = measure * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]);
                triplets.push((a, b, k));
            }
        }
    }
    for (node, value) in fixed.iter().enumerate() {
        if let Some(v) = value {
            triplets.push((node, node, 1.0));
            rhs[node] = *v;
        }
    }
    let m = SparseMatrix::from_triplets(n, &triplets);
    crate::linalg::linear_solve(&m, &rhs).map_err(|e| FemError::Config(format!("potential lifting failed: {e}")))
}

/// Assembles the residual (and Jacobian) of the weak form, including Neumann
/// facet terms but without Dirichlet rows.
pub fn assemble_system(
    state: &FieldState,
    problem: &Problem,
    with_jacobian: bool,
) -> Result<AssembledSystem, FemError> {
    problem.check_state(state)?;
    let mesh = &*problem.mesh;
    let mixture = &problem.mixture;
    let dofs = problem.dofs;
    let nf = dofs.n_fields;
    let nc = nf - 2;
    let dim = mesh.dim();
    let inv_l2 = 1.0 / mixture.lambda2();
    let inv_a2 = 1.0 / mixture.a2();
    let a2 = mixture.a2();
    let dn_dp = mixture.number_density_slope();
    let z: SpeciesVec = mixture.charges().collect();
    let kappa: SpeciesVec = mixture.species()[..nc].iter().map(|s| s.kappa).collect();

    let mut residual = vec![0.0; dofs.n_dofs()];
    let mut jacobian = with_jacobian.then(|| SparseMatrix::zeros(problem.pattern.clone()));

    let m = dim + 1;
    let nl = m * nf;
    let mut local_r = vec![0.0; nl];
    let mut local_j = vec![0.0; nl * nl];
    let dot = |a: &[f64; 2], b: &[f64; 2]| a[0] * b[0] + a[1] * b[1];

    for cell in 0..mesh.n_cells() {
        let nodes = mesh.cell(cell);
        let grads = mesh.basis_gradients(cell);
        local_r.fill(0.0);
        if with_jacobian {
            local_j.fill(0.0);
        }
        // cell-constant gradients of every field
        let mut grad = vec![[0.0f64; 2]; nf];
        for (a, &node) in nodes.iter().enumerate() {
            for (f, g) in grad.iter_mut().enumerate() {
                let v = state.values[node * nf + f];
                g[0] += v * grads[a][0];
                g[1] += v * grads[a][1];
            }
        }
        let (grad_phi, grad_p) = (grad[0], grad[1]);

        for (bary, weight) in cell_quadrature(mesh, cell) {
            let mut at = vec![0.0; nf];
            for (a, &node) in nodes.iter().enumerate() {
                for (f, v) in at.iter_mut().enumerate() {
                    *v += bary[a] * state.values[node * nf + f];
                }
            }
            let (phi, p, u) = (at[0], at[1], &at[2..]);
            let infeasible = |source| FemError::Infeasible { cell, source };
            let density = mixture.number_density(p).map_err(infeasible)?;
            let comp = composition(problem.variables, mixture, phi, p, u).map_err(infeasible)?;
            let zbar: f64 = z.iter().zip(&comp.y).map(|(z, y)| z * y).sum();
            let nf_charge = density * zbar;
            let dnf_dp = dn_dp * zbar;
            // d n^F / d u_c
            let dnf_du: SpeciesVec = (0..nc)
                .map(|c| match &comp.dy {
                    None => density * z[c],
                    Some(dy) => density * (0..nc).map(|a| z[a] * dy[a][c]).sum::<f64>(),
                })
                .collect();
            // d(g_a - g_N)/dp and its pressure derivative
            let slope: SpeciesVec = kappa.iter().map(|k| k * a2 / density).collect();
            let dslope: SpeciesVec = kappa.iter().map(|k| -k * a2 * dn_dp / (density * density)).collect();
            let flux: Vec<[f64; 2]> = (0..nc)
                .map(|a| {
                    let mut g = [0.0; 2];
                    for d in 0..2 {
                        g[d] = slope[a] * grad_p[d] + z[a] * grad_phi[d];
                        for b in 0..nc {
                            g[d] += comp.chem[a][b] * grad[2 + b][d];
                        }
                    }
                    g
                })
                .collect();

            for i in 0..m {
                let (psi_i, g_i) = (bary[i], &grads[i]);
                let row = i * nf;
                local_r[row] += weight * (dot(&grad_phi, g_i) - inv_l2 * nf_charge * psi_i);
                let mom = [
                    grad_p[0] + inv_a2 * nf_charge * grad_phi[0],
                    grad_p[1] + inv_a2 * nf_charge * grad_phi[1],
                ];
                local_r[row + 1] += weight * dot(&mom, g_i);
                for a in 0..nc {
                    local_r[row + 2 + a] += weight * dot(&flux[a], g_i);
                }
                if !with_jacobian {
                    continue;
                }
                let phi_gi = dot(&grad_phi, g_i);
                let p_gi = dot(&grad_p, g_i);
                for j in 0..m {
                    let (psi_j, g_j) = (bary[j], &grads[j]);
                    let gij = dot(g_i, g_j);
                    let col = j * nf;
                    let mut put = |r: usize, c: usize, v: f64| local_j[(row + r) * nl + col + c] += weight * v;
                    put(0, 0, gij);
                    put(0, 1, -inv_l2 * dnf_dp * psi_j * psi_i);
                    put(1, 1, gij + inv_a2 * dnf_dp * psi_j * phi_gi);
                    put(1, 0, inv_a2 * nf_charge * gij);
                    for c in 0..nc {
                        put(0, 2 + c, -inv_l2 * dnf_du[c] * psi_j * psi_i);
                        put(1, 2 + c, inv_a2 * dnf_du[c] * psi_j * phi_gi);
                    }
                    for a in 0..nc {
                        put(2 + a, 0, z[a] * gij);
                        put(2 + a, 1, slope[a] * gij + dslope[a] * psi_j * p_gi);
                        for c in 0..nc {
                            let mut v = comp.chem[a][c] * gij;
                            if let Some(dchem) = &comp.dchem {
                                for b in 0..nc {
                                    v += psi_j * dchem[a][b][c] * dot(&grad[2 + b], g_i);
                                }
                            }
                            put(2 + a, 2 + c, v);
                        }
                    }
                }
            }
        }

        for (i, &node_i) in nodes.iter().enumerate() {
            for f in 0..nf {
                residual[node_i * nf + f] += local_r[i * nf + f];
            }
        }
        if let Some(jac) = jacobian.as_mut() {
            for (i, &node_i) in nodes.iter().enumerate() {
                for fi in 0..nf {
                    let r = node_i * nf + fi;
                    for (j, &node_j) in nodes.iter().enumerate() {
                        for fj in 0..nf {
                            let v = local_j[(i * nf + fi) * nl + j * nf + fj];
                            if v != 0.0 {
                                jac.add(r, node_j * nf + fj, v);
                            }
                        }
                    }
                }
            }
        }
    }

    for (k, load) in neumann_loads(problem) {
        residual[k] -= load;
    }
    Ok(AssembledSystem { residual, jacobian })
}

/// Facet integrals `int h v ds` of all Neumann data, per degree of freedom.
pub fn neumann_loads(problem: &Problem) -> Vec<(usize, f64)> {
    let mesh = &*problem.mesh;
    let mut out = Vec::new();
    for cond in &problem.bcs.neumann {
        for (nodes, tag) in mesh.facets() {
            if tag != cond.tag {
                continue;
            }
            for (basis, x, weight) in facet_quadrature(mesh, nodes) {
                let h = cond.data.at(&x[..mesh.dim()]);
                if h == 0.0 {
                    continue;
                }
                for (k, &node) in nodes.iter().enumerate() {
                    out.push((problem.dofs.dof(node, cond.field), weight * h * basis[k]));
                }
            }
        }
    }
    out
}

/// Replaces Dirichlet rows: `residual_i = state_i - g_i` and a unit Jacobian row.
pub fn apply_boundary_conditions(
    sys: &mut AssembledSystem,
    state: &FieldState,
    problem: &Problem,
) -> Result<(), FemError> {
    for c in problem.constraints()? {
        sys.residual[c.dof] = state.values[c.dof] - c.value;
        if let Some(j) = sys.jacobian.as_mut() {
            j.set_unit_row(c.dof);
        }
    }
    Ok(())
}
