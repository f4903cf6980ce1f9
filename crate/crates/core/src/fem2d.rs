//! P1 finite elements on star-shaped domains.
//!
//! A structured polar mesh of the unit disk is built once and pushed
//! through the radial map `x ↦ f(ω_x) x` for every shape. The boundary
//! ring carries exactly the circle grid on which `f` lives.

use std::f64::consts::TAU;
use std::sync::Arc;

use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::circle::{CircleGrid, RadialFunction};
use crate::sparse::{pcg, CgReport};
use crate::{Error, Result};

pub type Point = [f64; 2];

/// Relative residual required of every Poisson solve.
pub const SOLVE_TOL: f64 = 1e-12;

/// Position of a vertex on the circle grid: `(i, j, t)` means the angle
/// lies on arc `i → j` at fraction `t`, so a P1 boundary function takes
/// the value `(1 - t) g_i + t g_j` there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngularWeight {
    pub i: usize,
    pub j: usize,
    pub t: f64,
}

/// Unit-disk mesh with its boundary grid.
#[derive(Debug, Clone)]
pub struct ReferenceMesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary_nodes: Vec<usize>,
    /// `None` for the origin.
    weights: Vec<Option<AngularWeight>>,
    grid: Arc<CircleGrid>,
    rings: usize,
}

fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

/// Unit-disk mesh with `rings` rings, ring `k` holding `6k` vertices.
pub fn reference_disk_mesh(rings: usize) -> Result<ReferenceMesh> {
    if rings < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 rings, got {rings}")));
    }
    let counts: Vec<usize> = (1..=rings).map(|k| 6 * k).collect();
    ReferenceMesh::from_ring_counts(&counts)
}

impl ReferenceMesh {
    /// Mesh whose boundary ring has `n` vertices. Inner rings get roughly
    /// `n k / rings` vertices, rounded to a multiple of four so the mesh
    /// keeps the quarter-turn symmetry.
    pub fn with_boundary(n: usize, rings: usize) -> Result<Self> {
        if rings < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 rings, got {rings}")));
        }
        if n < 3 {
            return Err(Error::InvalidGrid(format!("boundary needs 3 vertices, got {n}")));
        }
        let mut counts: Vec<usize> = (1..rings)
            .map(|k| {
                let target = n as f64 * k as f64 / rings as f64;
                (4.0 * (target / 4.0).round()).max(4.0) as usize
            })
            .collect();
        counts.push(n);
        Self::from_ring_counts(&counts)
    }

    fn from_ring_counts(counts: &[usize]) -> Result<Self> {
        let rings = counts.len();
        let mut vertices = vec![[0.0, 0.0]];
        let mut angles = vec![0.0];
        let mut ring_start = Vec::with_capacity(rings);
        for (k, &m) in counts.iter().enumerate() {
            ring_start.push(vertices.len());
            let r = (k + 1) as f64 / rings as f64;
            for j in 0..m {
                let a = TAU * j as f64 / m as f64;
                angles.push(a);
                vertices.push([r * a.cos(), r * a.sin()]);
            }
        }
        let mut triangles = Vec::new();
        let m1 = counts[0];
        for j in 0..m1 {
            triangles.push([0, ring_start[0] + j, ring_start[0] + (j + 1) % m1]);
        }
        for k in 1..rings {
            let (ma, mb) = (counts[k - 1], counts[k]);
            let (sa, sb) = (ring_start[k - 1], ring_start[k]);
            let (mut i, mut j) = (0, 0);
            while i < ma || j < mb {
                let next_a = TAU * (i + 1) as f64 / ma as f64;
                let next_b = TAU * (j + 1) as f64 / mb as f64;
                let advance_inner = j == mb || (i < ma && next_a <= next_b);
                if advance_inner {
                    triangles.push([sa + i, sa + (i + 1) % ma, sb + j % mb]);
                    i += 1;
                } else {
                    triangles.push([sa + i % ma, sb + (j + 1) % mb, sb + j]);
                    j += 1;
                }
            }
        }
        for t in triangles.iter_mut() {
            if signed_area(vertices[t[0]], vertices[t[1]], vertices[t[2]]) < 0.0 {
                t.swap(1, 2);
            }
        }
        for (index, t) in triangles.iter().enumerate() {
            let area = signed_area(vertices[t[0]], vertices[t[1]], vertices[t[2]]);
            if !(area > 0.0) {
                return Err(Error::DegenerateMesh { index, area });
            }
        }
        let last = ring_start[rings - 1];
        let boundary_nodes: Vec<usize> = (last..vertices.len()).collect();
        let nodes: Vec<f64> = boundary_nodes.iter().map(|&v| angles[v]).collect();
        let grid = Arc::new(CircleGrid::new(nodes)?);
        let weights = angles
            .iter()
            .enumerate()
            .map(|(v, &a)| {
                if v == 0 {
                    None
                } else if v >= last {
                    let i = v - last;
                    Some(AngularWeight { i, j: grid.next(i), t: 0.0 })
                } else {
                    let (i, j, t) = grid.locate(a);
                    Some(AngularWeight { i, j, t })
                }
            })
            .collect();
        Ok(Self {
            vertices,
            triangles,
            boundary_nodes,
            weights,
            grid,
            rings,
        })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_nodes(&self) -> &[usize] {
        &self.boundary_nodes
    }

    pub fn weights(&self) -> &[Option<AngularWeight>] {
        &self.weights
    }

    pub fn grid(&self) -> &Arc<CircleGrid> {
        &self.grid
    }

    pub fn rings(&self) -> usize {
        self.rings
    }

    /// Value at vertex `v` of the P1 boundary function with nodal values `g`.
    pub fn angular_value(&self, v: usize, g: &[f64]) -> f64 {
        match self.weights[v] {
            None => 0.0,
            Some(w) => (1.0 - w.t) * g[w.i] + w.t * g[w.j],
        }
    }
}

/// Mapped mesh `Φ_f(reference)`.
#[derive(Debug, Clone)]
pub struct DiskMesh {
    reference: Arc<ReferenceMesh>,
    vertices: Vec<Point>,
    areas: Vec<f64>,
    is_boundary: Vec<bool>,
}

/// `x ↦ f(ω_x) x` applied to every reference vertex.
pub fn map_mesh(reference: &Arc<ReferenceMesh>, f: &RadialFunction) -> Result<DiskMesh> {
    if !reference.grid.same_as(f.grid()) {
        return Err(Error::GridMismatch);
    }
    let vertices: Vec<Point> = reference
        .vertices
        .iter()
        .enumerate()
        .map(|(v, x)| {
            let r = reference.angular_value(v, f.values());
            [r * x[0], r * x[1]]
        })
        .collect();
    let mut areas = Vec::with_capacity(reference.triangles.len());
    for (index, t) in reference.triangles.iter().enumerate() {
        let area = signed_area(vertices[t[0]], vertices[t[1]], vertices[t[2]]);
        if !(area > 0.0) {
            return Err(Error::DegenerateMesh { index, area });
        }
        areas.push(area);
    }
    let mut is_boundary = vec![false; vertices.len()];
    for &b in &reference.boundary_nodes {
        is_boundary[b] = true;
    }
    Ok(DiskMesh {
        reference: reference.clone(),
        vertices,
        areas,
        is_boundary,
    })
}

impl DiskMesh {
    pub fn reference(&self) -> &Arc<ReferenceMesh> {
        &self.reference
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.reference.triangles
    }

    pub fn boundary_nodes(&self) -> &[usize] {
        &self.reference.boundary_nodes
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        self.is_boundary[v]
    }

    pub fn area(&self, t: usize) -> f64 {
        self.areas[t]
    }

    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    pub fn corners(&self, t: usize) -> [Point; 3] {
        let tri = self.reference.triangles[t];
        [self.vertices[tri[0]], self.vertices[tri[1]], self.vertices[tri[2]]]
    }

    /// Gradients of the three barycentric coordinates on triangle `t`.
    pub fn gradients(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.corners(t);
        let two_area = 2.0 * self.areas[t];
        [
            [(b[1] - c[1]) / two_area, (c[0] - b[0]) / two_area],
            [(c[1] - a[1]) / two_area, (a[0] - c[0]) / two_area],
            [(a[1] - b[1]) / two_area, (b[0] - a[0]) / two_area],
        ]
    }

    /// Smallest interior angle over all triangles, in degrees.
    pub fn min_angle_degrees(&self) -> f64 {
        let mut best = 180.0f64;
        for t in 0..self.areas.len() {
            let p = self.corners(t);
            for k in 0..3 {
                let (a, b, c) = (p[k], p[(k + 1) % 3], p[(k + 2) % 3]);
                let u = [b[0] - a[0], b[1] - a[1]];
                let v = [c[0] - a[0], c[1] - a[1]];
                let cos = (u[0] * v[0] + u[1] * v[1])
                    / ((u[0] * u[0] + u[1] * u[1]).sqrt() * (v[0] * v[0] + v[1] * v[1]).sqrt());
                best = best.min(cos.clamp(-1.0, 1.0).acos().to_degrees());
            }
        }
        best
    }
}

/// Nodal values on the mesh vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct FemField {
    pub values: Vec<f64>,
}

impl FemField {
    pub fn zeros(n: usize) -> Self {
        Self { values: vec![0.0; n] }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Edge midpoints of a triangle, midpoint `k` opposite vertex `k`.
pub fn midpoints(p: &[Point; 3]) -> [Point; 3] {
    let mid = |a: Point, b: Point| [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
    [mid(p[1], p[2]), mid(p[2], p[0]), mid(p[0], p[1])]
}

/// `Σ_T |T|/3 Σ_m q(x_m, v(x_m))` over edge midpoints.
pub fn integrate(mesh: &DiskMesh, v: &FemField, q: impl Fn(Point, f64) -> f64) -> f64 {
    let mut total = 0.0;
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let mids = midpoints(&mesh.corners(t));
        let vals = tri.map(|k| v.values[k]);
        let mut s = 0.0;
        for (m, x) in mids.iter().enumerate() {
            let vm = 0.5 * (vals[(m + 1) % 3] + vals[(m + 2) % 3]);
            s += q(*x, vm);
        }
        total += mesh.area(t) / 3.0 * s;
    }
    total
}

/// Stiffness matrix with boundary rows and columns eliminated.
#[derive(Debug, Clone)]
pub struct Poisson {
    dof: Vec<Option<usize>>,
    matrix: CsrMatrix<f64>,
    n_vertices: usize,
}

impl Poisson {
    pub fn new(mesh: &DiskMesh) -> Self {
        let n_vertices = mesh.vertices().len();
        let mut dof = vec![None; n_vertices];
        let mut count = 0;
        for (v, d) in dof.iter_mut().enumerate() {
            if !mesh.is_boundary(v) {
                *d = Some(count);
                count += 1;
            }
        }
        let mut coo = CooMatrix::new(count, count);
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let grads = mesh.gradients(t);
            let area = mesh.area(t);
            for a in 0..3 {
                let Some(ia) = dof[tri[a]] else { continue };
                for b in 0..3 {
                    let Some(ib) = dof[tri[b]] else { continue };
                    let k = area * (grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1]);
                    coo.push(ia, ib, k);
                }
            }
        }
        Self {
            dof,
            matrix: CsrMatrix::from(&coo),
            n_vertices,
        }
    }

    /// Solve `K u = load` on the interior, `u = 0` on the boundary.
    pub fn solve(&self, load: &[f64]) -> Result<(FemField, CgReport)> {
        let n = self.matrix.nrows();
        let mut rhs = vec![0.0; n];
        for (v, d) in self.dof.iter().enumerate() {
            if let Some(i) = d {
                rhs[*i] = load[v];
            }
        }
        let (x, report) = pcg(&self.matrix, &rhs, SOLVE_TOL, 20 * n + 1000)?;
        let mut values = vec![0.0; self.n_vertices];
        for (v, d) in self.dof.iter().enumerate() {
            if let Some(i) = d {
                values[v] = x[*i];
            }
        }
        Ok((FemField { values }, report))
    }
}

/// `∫ q(x, v(x)) φ_k` for every vertex `k`, midpoint rule.
pub fn load_vector(mesh: &DiskMesh, v: Option<&FemField>, q: impl Fn(Point, f64) -> f64) -> Vec<f64> {
    let mut load = vec![0.0; mesh.vertices().len()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let mids = midpoints(&mesh.corners(t));
        let qm: Vec<f64> = (0..3)
            .map(|m| {
                let vm = v.map_or(0.0, |v| 0.5 * (v.values[tri[(m + 1) % 3]] + v.values[tri[(m + 2) % 3]]));
                q(mids[m], vm)
            })
            .collect();
        let w = mesh.area(t) / 3.0;
        for k in 0..3 {
            // φ_k is 1/2 at the two midpoints touching vertex k
            load[tri[k]] += w * 0.5 * (qm[(k + 1) % 3] + qm[(k + 2) % 3]);
        }
    }
    load
}

/// `∫ ∇u·∇η = ∫ F η` with `u = 0` on the boundary.
pub fn solve_state(mesh: &DiskMesh, source: impl Fn(Point) -> f64) -> Result<FemField> {
    let poisson = Poisson::new(mesh);
    let load = load_vector(mesh, None, |x, _| source(x));
    Ok(poisson.solve(&load)?.0)
}

/// `∫ ∇p·∇η + η j_v(x, u) = 0` with `p = 0` on the boundary.
pub fn solve_adjoint(mesh: &DiskMesh, u: &FemField, j_v: impl Fn(Point, f64) -> f64) -> Result<FemField> {
    if u.values.len() != mesh.vertices().len() {
        return Err(Error::ShapeMismatch {
            expected: (mesh.vertices().len(), 1),
            got: (u.values.len(), 1),
        });
    }
    let poisson = Poisson::new(mesh);
    let load = load_vector(mesh, Some(u), |x, uv| -j_v(x, uv));
    Ok(poisson.solve(&load)?.0)
}
