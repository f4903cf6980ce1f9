//! Shape functionals of Poisson-constrained problems and their discrete
//! shape derivatives with respect to the radial function.
//!
//! The derivative is the exact derivative of the discrete functional: state
//! and adjoint are P1 solutions on the mapped mesh, the perturbation field
//! is the P1 interpolant of `V_g(y) = g(ω_y)/f(ω_y) y` and quadrature points
//! move with the mesh. The source enters through
//! `-∫ (F Div V + ∇F·V) p`, which equals `∫ F ∇p·V` for exact solutions.

use std::sync::Arc;

use crate::circle::{P1Function, RadialFunction};
use crate::fem2d::{load_vector, map_mesh, midpoints, DiskMesh, FemField, Point, Poisson, ReferenceMesh};
use crate::measure::NodalFunctional;
use crate::{Error, Result};

pub type ScalarField = Arc<dyn Fn(Point) -> f64 + Send + Sync>;
pub type VectorField = Arc<dyn Fn(Point) -> Point + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnergyKind {
    /// `∫ u - Z`
    Linear,
    /// `½ ∫ (u - Z)²`
    Tracking,
}

#[derive(Clone)]
pub struct EnergySpec {
    pub kind: EnergyKind,
    pub z: ScalarField,
    pub z_grad: VectorField,
    pub source: ScalarField,
    pub source_grad: VectorField,
}

impl std::fmt::Debug for EnergySpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EnergySpec").field("kind", &self.kind).finish_non_exhaustive()
    }
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl EnergySpec {
    /// `F = 0`, `Z = -|x₁| - |x₂|`, linear energy.
    pub fn no_pde() -> Self {
        Self {
            kind: EnergyKind::Linear,
            z: Arc::new(|x| -x[0].abs() - x[1].abs()),
            z_grad: Arc::new(|x| [-sign0(x[0]), -sign0(x[1])]),
            source: Arc::new(|_| 0.0),
            source_grad: Arc::new(|_| [0.0, 0.0]),
        }
    }

    /// `F = Z = 1 - |x|²`, tracking energy.
    pub fn laplace() -> Self {
        let bump: ScalarField = Arc::new(|x| 1.0 - x[0] * x[0] - x[1] * x[1]);
        let bump_grad: VectorField = Arc::new(|x| [-2.0 * x[0], -2.0 * x[1]]);
        Self {
            kind: EnergyKind::Tracking,
            z: bump.clone(),
            z_grad: bump_grad.clone(),
            source: bump,
            source_grad: bump_grad,
        }
    }

    pub fn with_constant_target(kind: EnergyKind, z: f64) -> Self {
        Self {
            kind,
            z: Arc::new(move |_| z),
            z_grad: Arc::new(|_| [0.0, 0.0]),
            source: Arc::new(|_| 0.0),
            source_grad: Arc::new(|_| [0.0, 0.0]),
        }
    }

    /// Integrand `j(x, v)`.
    pub fn j(&self, x: Point, v: f64) -> f64 {
        let d = v - (self.z)(x);
        match self.kind {
            EnergyKind::Linear => d,
            EnergyKind::Tracking => 0.5 * d * d,
        }
    }

    /// `∂j/∂v`.
    pub fn j_v(&self, x: Point, v: f64) -> f64 {
        match self.kind {
            EnergyKind::Linear => 1.0,
            EnergyKind::Tracking => v - (self.z)(x),
        }
    }

    /// `∂j/∂x`.
    pub fn j_x(&self, x: Point, v: f64) -> Point {
        let g = (self.z_grad)(x);
        let c = match self.kind {
            EnergyKind::Linear => -1.0,
            EnergyKind::Tracking => -(v - (self.z)(x)),
        };
        [c * g[0], c * g[1]]
    }
}

/// State, adjoint and energy of one shape.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub mesh: DiskMesh,
    pub state: FemField,
    pub energy: f64,
}

fn state(mesh: &DiskMesh, poisson: &Poisson, spec: &EnergySpec) -> Result<FemField> {
    let load = load_vector(mesh, None, |x, _| (spec.source)(x));
    Ok(poisson.solve(&load)?.0)
}

fn energy_on(mesh: &DiskMesh, u: &FemField, spec: &EnergySpec) -> f64 {
    crate::fem2d::integrate(mesh, u, |x, v| spec.j(x, v))
}

/// `J(f)` on the mapped reference mesh.
pub fn energy(f: &RadialFunction, spec: &EnergySpec, reference: &Arc<ReferenceMesh>) -> Result<f64> {
    Ok(evaluate(f, spec, reference)?.energy)
}

pub fn evaluate(f: &RadialFunction, spec: &EnergySpec, reference: &Arc<ReferenceMesh>) -> Result<Evaluation> {
    let mesh = map_mesh(reference, f)?;
    let poisson = Poisson::new(&mesh);
    let u = state(&mesh, &poisson, spec)?;
    let energy = energy_on(&mesh, &u, spec);
    Ok(Evaluation { mesh, state: u, energy })
}

fn adjoint(mesh: &DiskMesh, poisson: &Poisson, u: &FemField, spec: &EnergySpec) -> Result<FemField> {
    let load = load_vector(mesh, Some(u), |x, v| -spec.j_v(x, v));
    Ok(poisson.solve(&load)?.0)
}

fn grad_of(field: &FemField, tri: &[usize; 3], grads: &[Point; 3]) -> Point {
    let mut g = [0.0, 0.0];
    for k in 0..3 {
        g[0] += field.values[tri[k]] * grads[k][0];
        g[1] += field.values[tri[k]] * grads[k][1];
    }
    g
}

fn dot2(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Per-triangle quantities shared by both assembly routes.
struct Element {
    area: f64,
    grads: [Point; 3],
    du: Point,
    dp: Point,
    /// Σ_m j at the midpoints.
    j_sum: f64,
    /// Σ_m F p at the midpoints.
    fp_sum: f64,
    /// `j_x` and `∇F p` at each midpoint.
    j_x: [Point; 3],
    grad_f_p: [Point; 3],
}

fn element(mesh: &DiskMesh, t: usize, u: &FemField, p: &FemField, spec: &EnergySpec) -> Element {
    let tri = mesh.triangles()[t];
    let grads = mesh.gradients(t);
    let mids = midpoints(&mesh.corners(t));
    let mut j_sum = 0.0;
    let mut fp_sum = 0.0;
    let mut j_x = [[0.0; 2]; 3];
    let mut grad_f_p = [[0.0; 2]; 3];
    for m in 0..3 {
        let (a, b) = (tri[(m + 1) % 3], tri[(m + 2) % 3]);
        let um = 0.5 * (u.values[a] + u.values[b]);
        let pm = 0.5 * (p.values[a] + p.values[b]);
        j_sum += spec.j(mids[m], um);
        fp_sum += (spec.source)(mids[m]) * pm;
        j_x[m] = spec.j_x(mids[m], um);
        let gf = (spec.source_grad)(mids[m]);
        grad_f_p[m] = [gf[0] * pm, gf[1] * pm];
    }
    Element {
        area: mesh.area(t),
        grads,
        du: grad_of(u, &tri, &grads),
        dp: grad_of(p, &tri, &grads),
        j_sum,
        fp_sum,
        j_x,
        grad_f_p,
    }
}

impl Element {
    /// Contribution of the field that is `v` at local vertex `k` and zero
    /// at the other two.
    fn vertex_term(&self, k: usize, v: Point) -> f64 {
        let gl = self.grads[k];
        let div = dot2(v, gl);
        let stiff = div * dot2(self.du, self.dp)
            - dot2(v, self.dp) * dot2(gl, self.du)
            - dot2(v, self.du) * dot2(gl, self.dp);
        // the hat of vertex k is 1/2 at the two midpoints next to it
        let mut moving = 0.0;
        for m in 0..3 {
            if m != k {
                moving += 0.5 * (dot2(self.j_x[m], v) - dot2(self.grad_f_p[m], v));
            }
        }
        self.area * stiff + self.area / 3.0 * (div * (self.j_sum - self.fp_sum) + moving)
    }
}

/// Everything needed to differentiate at one shape.
#[derive(Debug, Clone)]
pub struct Linearization {
    pub evaluation: Evaluation,
    pub adjoint: FemField,
    pub derivative: NodalFunctional,
}

/// `a_i = 𝒥′(Ω_f)[V_{φ_i}]` for every boundary node.
pub fn assemble_derivative(
    f: &RadialFunction,
    spec: &EnergySpec,
    reference: &Arc<ReferenceMesh>,
) -> Result<NodalFunctional> {
    Ok(linearize(f, spec, reference)?.derivative)
}

pub fn linearize(f: &RadialFunction, spec: &EnergySpec, reference: &Arc<ReferenceMesh>) -> Result<Linearization> {
    let mesh = map_mesh(reference, f)?;
    let poisson = Poisson::new(&mesh);
    let u = state(&mesh, &poisson, spec)?;
    let p = adjoint(&mesh, &poisson, &u, spec)?;
    let energy = energy_on(&mesh, &u, spec);
    let n = reference.grid().len();
    let mut a = vec![0.0; n];
    let ref_vertices = reference.vertices();
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let el = element(&mesh, t, &u, &p, spec);
        for (k, &vk) in tri.iter().enumerate() {
            let Some(w) = reference.weights()[vk] else { continue };
            let x = ref_vertices[vk];
            for (node, weight) in [(w.i, 1.0 - w.t), (w.j, w.t)] {
                if weight != 0.0 {
                    a[node] += el.vertex_term(k, [weight * x[0], weight * x[1]]);
                }
            }
        }
    }
    Ok(Linearization {
        evaluation: Evaluation { mesh, state: u, energy },
        adjoint: p,
        derivative: NodalFunctional::new(reference.grid().clone(), a)?,
    })
}

/// `𝒥′(Ω_f)[V_g]` evaluated directly from the full P1 field `V_g`.
pub fn directional_derivative(
    f: &RadialFunction,
    g: &P1Function,
    spec: &EnergySpec,
    reference: &Arc<ReferenceMesh>,
) -> Result<f64> {
    if !g.grid().same_as(reference.grid()) {
        return Err(Error::GridMismatch);
    }
    let lin = linearize(f, spec, reference)?;
    let mesh = &lin.evaluation.mesh;
    let field: Vec<Point> = reference
        .vertices()
        .iter()
        .enumerate()
        .map(|(v, x)| {
            let s = reference.angular_value(v, g.values());
            [s * x[0], s * x[1]]
        })
        .collect();
    let mut total = 0.0;
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let el = element(mesh, t, &lin.evaluation.state, &lin.adjoint, spec);
        // DV = Σ_k V_k ⊗ ∇λ_k
        let mut dv = [[0.0; 2]; 2];
        for k in 0..3 {
            for r in 0..2 {
                for c in 0..2 {
                    dv[r][c] += field[tri[k]][r] * el.grads[k][c];
                }
            }
        }
        let div = dv[0][0] + dv[1][1];
        let mut a_du = [0.0; 2];
        for r in 0..2 {
            a_du[r] = div * el.du[r] - (dv[r][0] + dv[0][r]) * el.du[0] - (dv[r][1] + dv[1][r]) * el.du[1];
        }
        let mut moving = 0.0;
        for m in 0..3 {
            let (a, b) = (tri[(m + 1) % 3], tri[(m + 2) % 3]);
            let vm = [0.5 * (field[a][0] + field[b][0]), 0.5 * (field[a][1] + field[b][1])];
            moving += dot2(el.j_x[m], vm) - dot2(el.grad_f_p[m], vm);
        }
        total += el.area * dot2(a_du, el.dp) + el.area / 3.0 * (div * (el.j_sum - el.fp_sum) + moving);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circle::{dot, interpolate, weighted_mass_vector};
    use crate::measure::{balance_and_split, Functional};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn square_setup(n: usize, rings: usize) -> (Arc<ReferenceMesh>, RadialFunction) {
        let reference = Arc::new(ReferenceMesh::with_boundary(n, rings).unwrap());
        let f = RadialFunction::square(reference.grid().clone(), PI.sqrt()).unwrap();
        (reference, f)
    }

    #[test]
    fn linear_energy_on_square_is_exact() {
        let (reference, f) = square_setup(32, 6);
        let e = energy(&f, &EnergySpec::no_pde(), &reference).unwrap();
        assert_abs_diff_eq!(e, 4.0 * PI.powf(1.5), epsilon = 1e-11);
    }

    #[test]
    fn zero_target_tracking_without_source_is_zero() {
        let (reference, f) = square_setup(16, 3);
        let spec = EnergySpec::with_constant_target(EnergyKind::Tracking, 0.0);
        assert_eq!(energy(&f, &spec, &reference).unwrap(), 0.0);
    }

    #[test]
    fn tracking_on_radius_two_ball() {
        let reference = Arc::new(ReferenceMesh::with_boundary(128, 24).unwrap());
        let f = RadialFunction::disk(reference.grid().clone(), 2.0).unwrap();
        let e = energy(&f, &EnergySpec::laplace(), &reference).unwrap();
        assert!((e - 61.0 * PI / 15.0).abs() / (61.0 * PI / 15.0) < 5e-3, "{e}");
    }

    fn random_lip1(rng: &mut ChaCha8Rng, grid: &Arc<crate::circle::CircleGrid>) -> P1Function {
        let (a, b, c) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.0..6.3));
        let (d, e) = (rng.gen_range(0.5..1.0), rng.gen_range(0.2..0.5));
        // the square is invariant under quarter turns, so include modes that see it
        let g = interpolate(|t: f64| a * t.cos() + b * (2.0 * t + c).sin() + d * (4.0 * t + c).cos() + e, grid).unwrap();
        let lip = g.lipschitz_seminorm();
        g.scaled(1.0 / lip)
    }

    #[test]
    fn assembled_and_direct_derivatives_agree() {
        let (reference, f) = square_setup(32, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for spec in [EnergySpec::no_pde(), EnergySpec::laplace()] {
            let a = assemble_derivative(&f, &spec, &reference).unwrap();
            for _ in 0..2 {
                let g = random_lip1(&mut rng, reference.grid());
                let direct = directional_derivative(&f, &g, &spec, &reference).unwrap();
                assert_abs_diff_eq!(a.apply(&g).unwrap(), direct, epsilon = 1e-11 * direct.abs().max(1.0));
            }
        }
    }

    #[test]
    fn finite_differences_are_first_order() {
        let (reference, f) = square_setup(32, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for spec in [EnergySpec::no_pde(), EnergySpec::laplace()] {
            let a = assemble_derivative(&f, &spec, &reference).unwrap();
            let j0 = energy(&f, &spec, &reference).unwrap();
            for _ in 0..3 {
                let g = random_lip1(&mut rng, reference.grid());
                let exact = a.apply(&g).unwrap();
                let mut errs = Vec::new();
                for t in [1e-2, 1e-3, 1e-4] {
                    let ft = RadialFunction::new(f.function().axpby(1.0, &g, t).unwrap()).unwrap();
                    let fd = (energy(&ft, &spec, &reference).unwrap() - j0) / t;
                    errs.push((fd - exact).abs() / exact.abs());
                }
                assert!(errs[2] <= 1e-2, "{errs:?} {exact}");
                assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
            }
        }
    }

    #[test]
    fn constant_target_is_nearly_stationary() {
        // J = -Z |Ω| with F = 0: the derivative is the mesh area form, and
        // balancing against the exact mass vector leaves only O(h²)
        let mut last = f64::INFINITY;
        for n in [32, 64, 128] {
            let reference = Arc::new(ReferenceMesh::with_boundary(n, n / 5).unwrap());
            let vals: Vec<f64> = reference.grid().nodes().iter().map(|t| 1.5 + 0.2 * (3.0 * t).cos()).collect();
            let f = RadialFunction::from_values(reference.grid().clone(), vals).unwrap();
            let spec = EnergySpec::with_constant_target(EnergyKind::Linear, -1.0);
            let a = assemble_derivative(&f, &spec, &reference).unwrap();
            let pair = balance_and_split(&a, &weighted_mass_vector(&f)).unwrap();
            let rel = pair.beta / a.l1_norm();
            assert!(rel < 0.6 * last, "{rel} after {last}");
            last = rel;
        }
        assert!(last < 1e-3);
    }

    #[test]
    fn symmetric_ball_has_uniform_derivative() {
        let reference = Arc::new(ReferenceMesh::with_boundary(64, 12).unwrap());
        let f = RadialFunction::disk(reference.grid().clone(), 2.0).unwrap();
        let a = assemble_derivative(&f, &EnergySpec::laplace(), &reference).unwrap();
        let w = weighted_mass_vector(&f);
        let pair = balance_and_split(&a, &w).unwrap();
        assert!(pair.beta <= 2e-2 * a.l1_norm(), "{} vs {}", pair.beta, a.l1_norm());
        let total: f64 = dot(&w, &[1.0; 64]);
        assert!(total > 0.0);
    }
}
