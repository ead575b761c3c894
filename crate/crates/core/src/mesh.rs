//! Structured P1 meshes in one and two dimensions.

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeshError {
    #[error("invalid mesh parameters: {0}")]
    InvalidParameters(String),
    #[error("point {point:?} lies outside the mesh domain")]
    OutsideDomain { point: Vec<f64> },
    #[error("field has {got} values, expected {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("meshes have different spatial dimensions ({0} vs {1})")]
    DimensionMismatch(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryTag {
    Left,
    Right,
    Bottom,
    Top,
}

impl BoundaryTag {
    pub fn name(self) -> &'static str {
        match self {
            Self::Left => "left",
            Self::Right => "right",
            Self::Bottom => "bottom",
            Self::Top => "top",
        }
    }
}

/// How each rectangle of a structured grid is split into two triangles.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiagonalPattern {
    /// Lower-left to upper-right diagonal in every rectangle.
    #[default]
    Uniform,
    /// Uniform below `y = Ly/2`, reflected above it, so that the
    /// triangulation is invariant under `y -> Ly - y`. Requires even `ny`.
    MirroredY,
}

/// A simplicial mesh with tagged boundary facets.
///
/// Node coordinates, cell connectivity and facet connectivity are stored flat:
/// `dim` coordinates per node, `dim + 1` nodes per cell and `dim` nodes per
/// facet. 2D cells are counter-clockwise.
#[derive(Debug)]
pub struct Mesh {
    dim: usize,
    coords: Vec<f64>,
    cells: Vec<usize>,
    facets: Vec<usize>,
    facet_tags: Vec<BoundaryTag>,
    lower: [f64; 2],
    upper: [f64; 2],
    locator: OnceLock<CellLocator>,
}

impl Mesh {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_nodes(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len() / (self.dim + 1)
    }

    pub fn n_facets(&self) -> usize {
        self.facet_tags.len()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn cell(&self, c: usize) -> &[usize] {
        let k = self.dim + 1;
        &self.cells[c * k..(c + 1) * k]
    }

    pub fn facet(&self, f: usize) -> (&[usize], BoundaryTag) {
        (&self.facets[f * self.dim..(f + 1) * self.dim], self.facet_tags[f])
    }

    pub fn facets(&self) -> impl Iterator<Item = (&[usize], BoundaryTag)> + '_ {
        (0..self.n_facets()).map(move |f| self.facet(f))
    }

    pub fn has_tag(&self, tag: BoundaryTag) -> bool {
        self.facet_tags.contains(&tag)
    }

    /// Sorted, de-duplicated nodes lying on facets with the given tag.
    pub fn tagged_nodes(&self, tag: BoundaryTag) -> Vec<usize> {
        let mut nodes: Vec<usize> = self
            .facets()
            .filter(|(_, t)| *t == tag)
            .flat_map(|(n, _)| n.iter().copied())
            .collect();
        nodes.sort_unstable();
        nodes.dedup();
        nodes
    }

    /// Axis-aligned bounding box, `(lower, upper)`; unused axes are zero.
    pub fn bounds(&self) -> ([f64; 2], [f64; 2]) {
        (self.lower, self.upper)
    }

    /// Length (1D) or area (2D) of a cell.
    pub fn cell_measure(&self, c: usize) -> f64 {
        let nodes = self.cell(c);
        match self.dim {
            1 => self.node(nodes[1])[0] - self.node(nodes[0])[0],
            _ => {
                let (a, b, c) = (self.node(nodes[0]), self.node(nodes[1]), self.node(nodes[2]));
                0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
            }
        }
    }

    pub fn total_measure(&self) -> f64 {
        (0..self.n_cells()).map(|c| self.cell_measure(c)).sum()
    }

    /// Largest cell diameter-like size: cell length in 1D, longest edge in 2D.
    pub fn max_cell_size(&self) -> f64 {
        (0..self.n_cells())
            .map(|c| {
                let nodes = self.cell(c);
                let mut h: f64 = 0.0;
                for i in 0..nodes.len() {
                    for j in i + 1..nodes.len() {
                        let (a, b) = (self.node(nodes[i]), self.node(nodes[j]));
                        let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
                        h = h.max(d.sqrt());
                    }
                }
                h
            })
            .fold(0.0, f64::max)
    }

    /// Gradients of the P1 basis functions on a cell, `dim` entries per local node.
    pub fn basis_gradients(&self, c: usize) -> [[f64; 2]; 3] {
        let nodes = self.cell(c);
        match self.dim {
            1 => {
                let h = self.cell_measure(c);
                [[-1.0 / h, 0.0], [1.0 / h, 0.0], [0.0, 0.0]]
            }
            _ => {
                let (a, b, cc) = (self.node(nodes[0]), self.node(nodes[1]), self.node(nodes[2]));
                let twice_area = (b[0] - a[0]) * (cc[1] - a[1]) - (cc[0] - a[0]) * (b[1] - a[1]);
                [
                    [(b[1] - cc[1]) / twice_area, (cc[0] - b[0]) / twice_area],
                    [(cc[1] - a[1]) / twice_area, (a[0] - cc[0]) / twice_area],
                    [(a[1] - b[1]) / twice_area, (b[0] - a[0]) / twice_area],
                ]
            }
        }
    }

    /// Finds a cell containing `point` and the barycentric coordinates of the
    /// point in it. Points within `1e-12` (relative to the domain size) of the
    /// domain are accepted.
    pub fn locate(&self, point: &[f64]) -> Result<(usize, [f64; 3]), MeshError> {
        let outside = || MeshError::OutsideDomain { point: point.to_vec() };
        let tol = 1e-12 * (0..self.dim).map(|d| self.upper[d] - self.lower[d]).fold(1.0, f64::max);
        if (0..self.dim).any(|d| point[d] < self.lower[d] - tol || point[d] > self.upper[d] + tol) {
            return Err(outside());
        }
        match self.dim {
            1 => {
                let x = point[0];
                let n = self.n_nodes();
                // nodes are strictly increasing; cell i spans nodes i, i + 1
                let i = self.coords.partition_point(|&v| v <= x).clamp(1, n - 1) - 1;
                let (a, b) = (self.coords[i], self.coords[i + 1]);
                let t = ((x - a) / (b - a)).clamp(0.0, 1.0);
                Ok((i, [1.0 - t, t, 0.0]))
            }
            _ => {
                let locator = self.locator.get_or_init(|| CellLocator::new(self));
                locator.locate(self, point, tol).ok_or_else(outside)
            }
        }
    }

    fn barycentric(&self, c: usize, p: &[f64]) -> [f64; 3] {
        let nodes = self.cell(c);
        let (a, b, cc) = (self.node(nodes[0]), self.node(nodes[1]), self.node(nodes[2]));
        let det = (b[0] - a[0]) * (cc[1] - a[1]) - (cc[0] - a[0]) * (b[1] - a[1]);
        let l1 = ((p[0] - a[0]) * (cc[1] - a[1]) - (cc[0] - a[0]) * (p[1] - a[1])) / det;
        let l2 = ((b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])) / det;
        [1.0 - l1 - l2, l1, l2]
    }
}

/// Uniform bucket grid over cell bounding boxes for 2D point location.
#[derive(Debug)]
struct CellLocator {
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl CellLocator {
    fn new(mesh: &Mesh) -> Self {
        let n = ((mesh.n_cells() as f64).sqrt().ceil() as usize).max(1);
        let (nx, ny) = (n, n);
        let mut buckets = vec![Vec::new(); nx * ny];
        for c in 0..mesh.n_cells() {
            let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
            for &v in mesh.cell(c) {
                let p = mesh.node(v);
                for d in 0..2 {
                    lo[d] = lo[d].min(p[d]);
                    hi[d] = hi[d].max(p[d]);
                }
            }
            let (i0, j0) = Self::bucket_of(mesh, nx, ny, &lo);
            let (i1, j1) = Self::bucket_of(mesh, nx, ny, &hi);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    buckets[j * nx + i].push(c);
                }
            }
        }
        Self { nx, ny, buckets }
    }

    fn bucket_of(mesh: &Mesh, nx: usize, ny: usize, p: &[f64]) -> (usize, usize) {
        let idx = |d: usize, n: usize| {
            let span = mesh.upper[d] - mesh.lower[d];
            let t = ((p[d] - mesh.lower[d]) / span * n as f64).floor();
            (t.max(0.0) as usize).min(n - 1)
        };
        (idx(0, nx), idx(1, ny))
    }

    fn locate(&self, mesh: &Mesh, p: &[f64], tol: f64) -> Option<(usize, [f64; 3])> {
        let (i, j) = Self::bucket_of(mesh, self.nx, self.ny, p);
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for &c in &self.buckets[j * self.nx + i] {
            let bary = mesh.barycentric(c, p);
            let worst = bary.iter().copied().fold(f64::INFINITY, f64::min);
            if worst >= 0.0 {
                return Some((c, bary));
            }
            if best.as_ref().is_none_or(|b| worst > b.2) {
                best = Some((c, bary, worst));
            }
        }
        let (c, bary, worst) = best?;
        (worst >= -tol).then(|| {
            let clipped = bary.map(|b| b.max(0.0));
            let s: f64 = clipped.iter().sum();
            (c, clipped.map(|b| b / s))
        })
    }
}

/// Uniform partition of `[x0, x1]` into `n_cells` intervals, tagged `left`/`right`.
pub fn build_interval_mesh(x0: f64, x1: f64, n_cells: usize) -> Result<Mesh, MeshError> {
    if n_cells == 0 {
        return Err(MeshError::InvalidParameters(
            "interval mesh needs at least one cell".into(),
        ));
    }
    if !(x1 > x0) || !x0.is_finite() || !x1.is_finite() {
        return Err(MeshError::InvalidParameters(format!("invalid interval [{x0}, {x1}]")));
    }
    let h = (x1 - x0) / n_cells as f64;
    let mut coords: Vec<f64> = (0..=n_cells).map(|i| x0 + i as f64 * h).collect();
    coords[n_cells] = x1;
    let cells = (0..n_cells).flat_map(|i| [i, i + 1]).collect();
    Ok(Mesh {
        dim: 1,
        coords,
        cells,
        facets: vec![0, n_cells],
        facet_tags: vec![BoundaryTag::Left, BoundaryTag::Right],
        lower: [x0, 0.0],
        upper: [x1, 0.0],
        locator: OnceLock::new(),
    })
}

/// Structured triangulation of `[0, lx] x [0, ly]` with uniform diagonals.
pub fn build_rectangle_mesh(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Mesh, MeshError> {
    build_rectangle_mesh_with(lx, ly, nx, ny, DiagonalPattern::Uniform)
}

/// Structured triangulation of `[0, lx] x [0, ly]`; nodes are numbered row-major, x fastest.
pub fn build_rectangle_mesh_with(
    lx: f64,
    ly: f64,
    nx: usize,
    ny: usize,
    pattern: DiagonalPattern,
) -> Result<Mesh, MeshError> {
    if nx == 0 || ny == 0 {
        return Err(MeshError::InvalidParameters(format!(
            "need nx, ny >= 1, got {nx} x {ny}"
        )));
    }
    if !(lx > 0.0 && ly > 0.0) || !lx.is_finite() || !ly.is_finite() {
        return Err(MeshError::InvalidParameters(format!("invalid rectangle {lx} x {ly}")));
    }
    if pattern == DiagonalPattern::MirroredY && !ny.is_multiple_of(2) {
        return Err(MeshError::InvalidParameters(format!(
            "mirrored diagonals need even ny, got {ny}"
        )));
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut coords = Vec::with_capacity(2 * (nx + 1) * (ny + 1));
    for j in 0..=ny {
        let y = if j == ny { ly } else { ly * j as f64 / ny as f64 };
        for i in 0..=nx {
            let x = if i == nx { lx } else { lx * i as f64 / nx as f64 };
            coords.extend([x, y]);
        }
    }
    let mut cells = Vec::with_capacity(6 * nx * ny);
    for j in 0..ny {
        let mirrored = pattern == DiagonalPattern::MirroredY && j >= ny / 2;
        for i in 0..nx {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            if mirrored {
                cells.extend([a, b, d, b, c, d]);
            } else {
                cells.extend([a, b, c, a, c, d]);
            }
        }
    }
    let mut facets = Vec::new();
    let mut facet_tags = Vec::new();
    for i in 0..nx {
        facets.extend([id(i, 0), id(i + 1, 0)]);
        facet_tags.push(BoundaryTag::Bottom);
        facets.extend([id(i, ny), id(i + 1, ny)]);
        facet_tags.push(BoundaryTag::Top);
    }
    for j in 0..ny {
        facets.extend([id(0, j), id(0, j + 1)]);
        facet_tags.push(BoundaryTag::Left);
        facets.extend([id(nx, j), id(nx, j + 1)]);
        facet_tags.push(BoundaryTag::Right);
    }
    Ok(Mesh {
        dim: 2,
        coords,
        cells,
        facets,
        facet_tags,
        lower: [0.0, 0.0],
        upper: [lx, ly],
        locator: OnceLock::new(),
    })
}

/// Nodal values of one or more field components on a mesh, node-interleaved.
#[derive(Debug, Clone)]
pub struct FieldOnMesh {
    mesh: Arc<Mesh>,
    n_components: usize,
    values: Vec<f64>,
}

impl FieldOnMesh {
    pub fn new(mesh: Arc<Mesh>, n_components: usize, values: Vec<f64>) -> Result<Self, MeshError> {
        let expected = mesh.n_nodes() * n_components;
        if values.len() != expected || n_components == 0 {
            return Err(MeshError::SizeMismatch {
                expected,
                got: values.len(),
            });
        }
        Ok(Self {
            mesh,
            n_components,
            values,
        })
    }

    /// Samples a scalar function at the mesh nodes.
    pub fn from_fn(mesh: Arc<Mesh>, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..mesh.n_nodes()).map(|i| f(mesh.node(i))).collect();
        Self {
            mesh,
            n_components: 1,
            values,
        }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, node: usize, component: usize) -> f64 {
        self.values[node * self.n_components + component]
    }

    /// Extracts one component as a scalar field.
    pub fn component(&self, component: usize) -> FieldOnMesh {
        let values = self
            .values
            .iter()
            .skip(component)
            .step_by(self.n_components)
            .copied()
            .collect();
        Self {
            mesh: self.mesh.clone(),
            n_components: 1,
            values,
        }
    }

    /// Evaluates the piecewise-linear interpolant at an arbitrary point.
    pub fn evaluate(&self, point: &[f64], out: &mut [f64]) -> Result<(), MeshError> {
        let (c, bary) = self.mesh.locate(point)?;
        out.fill(0.0);
        for (&node, &w) in self.mesh.cell(c).iter().zip(&bary) {
            for (k, o) in out.iter_mut().enumerate() {
                *o += w * self.value(node, k);
            }
        }
        Ok(())
    }
}

/// Evaluates a P1 field at the nodes of another mesh covering a subset of its domain.
pub fn interpolate_p1(coarse: &FieldOnMesh, fine: &Arc<Mesh>) -> Result<FieldOnMesh, MeshError> {
    if coarse.mesh.dim() != fine.dim() {
        return Err(MeshError::DimensionMismatch(coarse.mesh.dim(), fine.dim()));
    }
    let k = coarse.n_components;
    let mut values = vec![0.0; fine.n_nodes() * k];
    for (i, out) in values.chunks_mut(k).enumerate() {
        coarse.evaluate(fine.node(i), out)?;
    }
    Ok(FieldOnMesh {
        mesh: fine.clone(),
        n_components: k,
        values,
    })
}
