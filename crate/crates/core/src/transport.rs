//! Entropic optimal transport on the circle and the Lipschitz-1 descent
//! direction recovered from its dual potential.
//!
//! The Sinkhorn iterations run on the potentials `φ = ε log u` and
//! `ψ = ε log v` with log-sum-exp reductions, so the kernel `exp(-C/ε)` is
//! never formed and small `ε` does not underflow. Levels of decreasing `ε`
//! are warm-started from the previous potentials.

use rayon::prelude::*;

use crate::circle::{dot, geodesic_distance, CircleGrid, P1Function, RadialFunction};
use crate::circle::weighted_mass_vector;
use crate::measure::{AtomicMeasure, BalancedMeasurePair, Functional};
use crate::{Error, Result};

/// Geodesic costs between the atoms of two measures, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn geodesic(mu: &AtomicMeasure, nu: &AtomicMeasure) -> Self {
        let (rows, cols) = (mu.len(), nu.len());
        let mut data = Vec::with_capacity(rows * cols);
        for x in mu.angles() {
            data.extend(nu.angles().map(|y| geodesic_distance(x, y)));
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: (rows, cols),
                got: (data.len(), 1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().cloned().fold(0.0, f64::max)
    }

    fn transposed(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }
}

/// Nonnegative coupling with its marginal residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    pub row_residual: f64,
    pub col_residual: f64,
}

impl TransportPlan {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: (rows, cols),
                got: (data.len(), 1),
            });
        }
        Ok(Self {
            rows,
            cols,
            data,
            row_residual: 0.0,
            col_residual: 0.0,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.data.chunks(self.cols).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for row in self.data.chunks(self.cols) {
            for (acc, p) in s.iter_mut().zip(row) {
                *acc += p;
            }
        }
        s
    }

    /// Largest marginal residual in the sup norm.
    pub fn residual(&self) -> f64 {
        self.row_residual.max(self.col_residual)
    }
}

/// `Σ P_ij C_ij`.
pub fn plan_cost(plan: &TransportPlan, cost: &CostMatrix) -> Result<f64> {
    if plan.shape() != cost.shape() {
        return Err(Error::ShapeMismatch {
            expected: cost.shape(),
            got: plan.shape(),
        });
    }
    Ok(dot(&plan.data, &cost.data))
}

/// Parameters of the ε-scaled Sinkhorn solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornOptions {
    /// First regularisation level, as a fraction of the largest cost.
    pub eps_start: f64,
    /// Last level, as a fraction of the largest cost; levels halve until at or below it.
    pub eps_min: f64,
    /// Sup-norm marginal residual at which a level stops.
    pub tol: f64,
    /// Iteration budget per level.
    pub max_iter: usize,
    /// Over-relaxation factor `ω ∈ [1, 2)` for the `φ` update; `1` is plain
    /// Sinkhorn. Halved towards one whenever the residual keeps rising.
    pub relaxation: f64,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self {
            eps_start: 0.1,
            eps_min: 1e-8,
            tol: 1e-9,
            max_iter: 100_000,
            relaxation: 1.0,
        }
    }
}

impl SinkhornOptions {
    /// The halving schedule for a problem whose largest cost is `max_cost`.
    pub fn schedule(&self, max_cost: f64) -> Vec<f64> {
        let scale = if max_cost > 0.0 { max_cost } else { 1.0 };
        let stop = self.eps_min * scale;
        let mut eps = self.eps_start * scale;
        let mut levels = vec![eps];
        while eps > stop {
            eps *= 0.5;
            levels.push(eps);
        }
        levels
    }
}

/// Output of a Sinkhorn solve on the normalised marginals `μ/β`, `ν/β`.
#[derive(Debug, Clone)]
pub struct SinkhornResult {
    pub plan: TransportPlan,
    pub cost: CostMatrix,
    /// `log u`, one entry per atom of `μ`.
    pub log_u: Vec<f64>,
    /// `log v`, one entry per atom of `ν`.
    pub log_v: Vec<f64>,
    /// Regularisation of the final level.
    pub eps: f64,
    pub iterations: usize,
    /// Whether the last level met the residual tolerance.
    pub converged: bool,
    /// `(iteration, residual)` at the end of each level, plus periodic samples.
    pub trace: Vec<(usize, f64)>,
}

impl SinkhornResult {
    /// Regularised plan cost for the normalised marginals.
    pub fn normalized_cost(&self) -> f64 {
        dot(&self.plan.data, &self.cost.data)
    }
}

struct Marginals {
    log_a: Vec<f64>,
    log_b: Vec<f64>,
}

fn marginals(mu: &AtomicMeasure, nu: &AtomicMeasure) -> Result<Marginals> {
    let (ma, mb) = (mu.mass(), nu.mass());
    if mu.is_empty() || nu.is_empty() || !(ma > 0.0) || !(mb > 0.0) {
        return Err(Error::Stationary);
    }
    Ok(Marginals {
        log_a: mu.weights().map(|w| (w / ma).ln()).collect(),
        log_b: nu.weights().map(|w| (w / mb).ln()).collect(),
    })
}

/// `a + b` as `hi + lo` with `hi = fl(a + b)` and `lo` the rounding error.
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Potential stored as an unevaluated sum `hi + lo`. One `f64` resolves
/// `φ_i + ψ_j - C_ij` only to `ulp(C)`, which caps the marginal accuracy
/// at about `ulp(C) / ε`.
#[derive(Debug, Clone)]
struct Potential {
    hi: Vec<f64>,
    lo: Vec<f64>,
}

impl Potential {
    fn zeros(n: usize) -> Self {
        Self { hi: vec![0.0; n], lo: vec![0.0; n] }
    }

    fn len(&self) -> usize {
        self.hi.len()
    }

    fn value(&self, k: usize) -> f64 {
        self.hi[k] + self.lo[k]
    }

    /// `self_k - c` keeping the low-order part.
    fn shifted(&self, k: usize, c: f64) -> (f64, f64) {
        let (s, e) = two_sum(self.hi[k], -c);
        two_sum(s, e + self.lo[k])
    }

    /// `self_k - other_k`, accurate when the two are close.
    fn diff(&self, other: &Potential, k: usize) -> f64 {
        (self.hi[k] - other.hi[k]) + (self.lo[k] - other.lo[k])
    }
}

/// `ε log Σ_j exp((pot_j - c_j) / ε)` for one row, stable for small ε.
/// The shift only needs to be near the maximum, so it is taken in `f64`.
fn log_sum_exp(pot: &Potential, costs: &[f64], eps: f64) -> (f64, f64) {
    let top = pot
        .hi
        .iter()
        .zip(costs)
        .map(|(p, c)| p - c)
        .fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = costs
        .iter()
        .enumerate()
        .map(|(j, &c)| {
            let (x, e) = pot.shifted(j, c);
            (((x - top) + e) / eps).exp()
        })
        .sum();
    two_sum(top, eps * s.ln())
}

/// `ε log m_k - ε log Σ_j exp((other_j - c_kj) / ε)` for every `k`.
fn update(out: &mut Potential, other: &Potential, costs: &[f64], log_m: &[f64], eps: f64) {
    let n = other.len();
    out.hi
        .par_iter_mut()
        .zip(out.lo.par_iter_mut())
        .enumerate()
        .for_each(|(k, (hi, lo))| {
            let (h, l) = log_sum_exp(other, &costs[k * n..(k + 1) * n], eps);
            (*hi, *lo) = two_sum(-h, eps * log_m[k] - l);
        });
}

/// One ε-level: iterate the potential updates until the row residual of
/// the plan (whose columns are exact after each ψ update) is below `tol`.
#[allow(clippy::too_many_arguments)]
fn run_level(
    cost: &[f64],
    cost_t: &[f64],
    marg: &Marginals,
    eps: f64,
    phi: &mut Potential,
    psi: &mut Potential,
    tol: f64,
    max_iter: usize,
    relaxation: f64,
    trace: &mut Vec<(usize, f64)>,
    offset: usize,
) -> (usize, f64, bool) {
    let n1 = phi.len();
    let mut next_phi = Potential::zeros(n1);
    let mut residual = f64::INFINITY;
    let mut omega = relaxation;
    let mut rises = 0;
    for it in 0..max_iter {
        let previous = residual;
        update(&mut next_phi, psi, cost, &marg.log_a, eps);
        // row sums of the current plan are a_i exp((φ_i - φ_i') / ε)
        residual = (0..n1)
            .map(|i| (marg.log_a[i].exp() * (phi.diff(&next_phi, i) / eps).exp_m1()).abs())
            .fold(0.0, f64::max);
        if it > 0 && residual <= tol {
            trace.push((offset + it, residual));
            return (it, residual, true);
        }
        if it % 1000 == 0 {
            trace.push((offset + it, residual));
        }
        if residual > previous {
            rises += 1;
            if rises >= 3 {
                omega = 1.0 + 0.5 * (omega - 1.0);
                rises = 0;
            }
        } else {
            rises = 0;
        }
        if omega == 1.0 {
            phi.clone_from(&next_phi);
        } else {
            for i in 0..n1 {
                let step = omega * next_phi.diff(phi, i);
                let (h, l) = two_sum(phi.hi[i], step);
                (phi.hi[i], phi.lo[i]) = two_sum(h, l + phi.lo[i]);
            }
        }
        update(psi, phi, cost_t, &marg.log_b, eps);
    }
    trace.push((offset + max_iter, residual));
    (max_iter, residual, false)
}

fn assemble_plan(cost: &CostMatrix, marg: &Marginals, phi: &Potential, psi: &Potential, eps: f64) -> TransportPlan {
    let (n1, n2) = cost.shape();
    let mut data = Vec::with_capacity(n1 * n2);
    for i in 0..n1 {
        for j in 0..n2 {
            let (h, l) = two_sum(phi.hi[i], psi.hi[j]);
            let (s, e) = two_sum(h, -cost.get(i, j));
            data.push(((s + (e + l + phi.lo[i] + psi.lo[j])) / eps).exp());
        }
    }
    let mut plan = TransportPlan {
        rows: n1,
        cols: n2,
        data,
        row_residual: 0.0,
        col_residual: 0.0,
    };
    plan.row_residual = plan
        .row_sums()
        .iter()
        .zip(&marg.log_a)
        .map(|(s, la)| (s - la.exp()).abs())
        .fold(0.0, f64::max);
    plan.col_residual = plan
        .col_sums()
        .iter()
        .zip(&marg.log_b)
        .map(|(s, lb)| (s - lb.exp()).abs())
        .fold(0.0, f64::max);
    plan
}

fn solve_levels(
    mu: &AtomicMeasure,
    nu: &AtomicMeasure,
    levels: &[f64],
    tol: f64,
    max_iter: usize,
    relaxation: f64,
) -> Result<SinkhornResult> {
    if !(1.0..2.0).contains(&relaxation) {
        return Err(Error::InvalidParameter(format!(
            "relaxation must lie in [1, 2), got {relaxation}"
        )));
    }
    if levels.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
        return Err(Error::InvalidParameter(format!(
            "regularisation must be positive, got {levels:?}"
        )));
    }
    let marg = marginals(mu, nu)?;
    let cost = CostMatrix::geodesic(mu, nu);
    let cost_t = cost.transposed();
    let mut phi = Potential::zeros(mu.len());
    let mut psi = Potential::zeros(nu.len());
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    for &eps in levels {
        let (it, _, ok) = run_level(
            &cost.data, &cost_t, &marg, eps, &mut phi, &mut psi, tol, max_iter, relaxation,
            &mut trace, iterations,
        );
        iterations += it;
        converged = ok;
    }
    let eps = *levels.last().expect("at least one level");
    let mut plan = assemble_plan(&cost, &marg, &phi, &psi, eps);
    // the assembled plan sums rounded exponentials and can land just above
    // tol; tighten and polish a few times
    let mut polish = 0;
    while converged && plan.residual() > tol && polish < 4 {
        let (it, _, ok) = run_level(
            &cost.data, &cost_t, &marg, eps, &mut phi, &mut psi, tol * 0.25, max_iter,
            relaxation, &mut trace, iterations,
        );
        iterations += it;
        converged = ok;
        plan = assemble_plan(&cost, &marg, &phi, &psi, eps);
        polish += 1;
    }
    converged = converged && plan.residual() <= tol;
    Ok(SinkhornResult {
        plan,
        cost,
        log_u: (0..phi.len()).map(|k| phi.value(k) / eps).collect(),
        log_v: (0..psi.len()).map(|k| psi.value(k) / eps).collect(),
        eps,
        iterations,
        converged,
        trace,
    })
}

/// Sinkhorn at a single regularisation, started from `u = v = 1`.
/// Non-convergence is reported through [`SinkhornResult::converged`].
pub fn sinkhorn(
    mu: &AtomicMeasure,
    nu: &AtomicMeasure,
    eps: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SinkhornResult> {
    solve_levels(mu, nu, &[eps], tol, max_iter, 1.0)
}

/// Sinkhorn over the halving ε schedule of `opts`, warm-starting each level.
pub fn sinkhorn_scaled(
    mu: &AtomicMeasure,
    nu: &AtomicMeasure,
    opts: &SinkhornOptions,
) -> Result<SinkhornResult> {
    let max_cost = CostMatrix::geodesic(mu, nu).max();
    let levels = opts.schedule(max_cost);
    solve_levels(mu, nu, &levels, opts.tol, opts.max_iter, opts.relaxation)
}

/// A potential on every node of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPotential {
    pub phi: P1Function,
    pub is_lip1: bool,
}

/// Kantorovich potential from Sinkhorn scalings: `ε log u` on `μ`,
/// `-ε log v` on `ν`, extended to the remaining nodes by the metric
/// (McShane) extension `min_k (φ_k + d(θ, θ_k))`.
pub fn dual_from_scalings(
    log_u: &[f64],
    log_v: &[f64],
    eps: f64,
    mu: &AtomicMeasure,
    nu: &AtomicMeasure,
    grid: &std::sync::Arc<CircleGrid>,
) -> Result<DualPotential> {
    if log_u.len() != mu.len() || log_v.len() != nu.len() {
        return Err(Error::ShapeMismatch {
            expected: (mu.len(), nu.len()),
            got: (log_u.len(), log_v.len()),
        });
    }
    let known: Vec<(f64, f64)> = mu
        .angles()
        .zip(log_u)
        .map(|(t, lu)| (t, eps * lu))
        .chain(nu.angles().zip(log_v).map(|(t, lv)| (t, -eps * lv)))
        .collect();
    if known.is_empty() {
        return Err(Error::Stationary);
    }
    let values = grid
        .nodes()
        .iter()
        .map(|&theta| {
            let on_atom = known
                .iter()
                .filter(|(t, _)| geodesic_distance(*t, theta) <= 1e-14)
                .map(|k| k.1)
                .fold(f64::INFINITY, f64::min);
            if on_atom.is_finite() {
                on_atom
            } else {
                known
                    .iter()
                    .map(|&(t, v)| v + geodesic_distance(t, theta))
                    .fold(f64::INFINITY, f64::min)
            }
        })
        .collect();
    Ok(DualPotential {
        phi: P1Function::new(grid.clone(), values)?,
        is_lip1: false,
    })
}

/// Infimal convolution with the geodesic metric: the largest 1-Lipschitz
/// function lying below `phi` at the nodes.
pub fn project_lip1(phi: &P1Function) -> P1Function {
    let nodes = phi.grid().nodes();
    let v = phi.values();
    let values: Vec<f64> = nodes
        .par_iter()
        .enumerate()
        .map(|(i, &ti)| {
            let mut best = v[i];
            for (j, &tj) in nodes.iter().enumerate() {
                if j != i {
                    best = best.min(v[j] + geodesic_distance(ti, tj));
                }
            }
            best
        })
        .collect();
    P1Function::new(phi.grid().clone(), values).expect("finite by construction")
}

/// Steepest descent direction with its predicted descent.
#[derive(Debug, Clone)]
pub struct Descent {
    /// 1-Lipschitz, `∫ f g = 0`, Lipschitz constant exactly one.
    pub g: P1Function,
    /// `⟨J'(f), g⟩`, nonpositive.
    pub predicted: f64,
    /// `β` times the regularised plan cost.
    pub plan_cost: f64,
    pub sinkhorn_iterations: usize,
    pub sinkhorn_converged: bool,
    pub marginal_residual: f64,
}

/// Descent direction from the transport dual.
pub fn descent_direction(
    pair: &BalancedMeasurePair,
    f: &RadialFunction,
    opts: &SinkhornOptions,
) -> Result<Descent> {
    if pair.stationary || pair.beta <= 0.0 {
        return Err(Error::Stationary);
    }
    if !pair.grid().same_as(f.grid()) {
        return Err(Error::GridMismatch);
    }
    let sk = sinkhorn_scaled(&pair.mu, &pair.nu, opts)?;
    let dual = dual_from_scalings(&sk.log_u, &sk.log_v, sk.eps, &pair.mu, &pair.nu, pair.grid())?;
    let psi = project_lip1(&dual.phi);
    let w = weighted_mass_vector(f);
    let g = psi.scaled(-1.0);
    let alpha = dot(&w, g.values()) / w.iter().sum::<f64>();
    let g = g.shifted(-alpha);
    let lip = g.lipschitz_seminorm();
    if !(lip > 1e-14) {
        return Err(Error::Stationary);
    }
    let g = g.scaled(1.0 / lip);
    let predicted = pair.balanced.apply(&g)?;
    Ok(Descent {
        g,
        predicted,
        plan_cost: pair.beta * sk.normalized_cost(),
        sinkhorn_iterations: sk.iterations,
        sinkhorn_converged: sk.converged,
        marginal_residual: sk.plan.residual(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circle::uniform_grid;
    use crate::measure::{balance_and_split, NodalFunctional};
    use crate::oracle::exact_transport_cost;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{PI, TAU};

    fn atoms(a: &[(f64, f64)]) -> AtomicMeasure {
        AtomicMeasure::new(a.to_vec()).unwrap()
    }

    #[test]
    fn single_atoms_have_one_plan() {
        let (mu, nu) = (atoms(&[(0.0, 1.0)]), atoms(&[(PI, 1.0)]));
        let r = sinkhorn(&mu, &nu, 0.1, 1e-12, 100).unwrap();
        assert_abs_diff_eq!(r.plan.get(0, 0), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(plan_cost(&r.plan, &r.cost).unwrap(), PI, epsilon = 1e-12);
        let grid = uniform_grid(2 * 8).unwrap();
        let scaled = sinkhorn_scaled(&mu, &nu, &SinkhornOptions::default()).unwrap();
        let d = dual_from_scalings(&scaled.log_u, &scaled.log_v, scaled.eps, &mu, &nu, &grid)
            .unwrap();
        assert_abs_diff_eq!(d.phi.values()[0] - d.phi.values()[8], PI, epsilon = 1e-9);
    }

    #[test]
    fn identical_marginals_cost_nearly_nothing() {
        let grid_atoms: Vec<(f64, f64)> = (0..12).map(|i| (i as f64 * TAU / 12.0, 1.0 + (i % 3) as f64)).collect();
        let mu = atoms(&grid_atoms);
        let mut last = f64::INFINITY;
        for eps in [0.1, 0.05, 0.01] {
            let r = sinkhorn(&mu, &mu, eps, 1e-12, 100_000).unwrap();
            let c = r.normalized_cost();
            assert!(c <= eps * (12f64).ln() + 1e-12, "{c} at {eps}");
            assert!(c <= last);
            last = c;
        }
        // potentials from a cold start stay flat at zero cost
        let r = sinkhorn(&mu, &mu, 0.05, 1e-12, 100_000).unwrap();
        let grid = uniform_grid(12).unwrap();
        let d = dual_from_scalings(&r.log_u, &r.log_v, r.eps, &mu, &mu, &grid).unwrap();
        let spread = d.phi.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - d.phi.values().iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread < 10.0 * r.eps, "{spread}");
    }

    #[test]
    fn plan_cost_checks() {
        let p = TransportPlan::new(1, 1, vec![1.0]).unwrap();
        let c = CostMatrix::from_rows(1, 1, vec![PI]).unwrap();
        assert_eq!(plan_cost(&p, &c).unwrap(), PI);
        let p2 = TransportPlan::new(2, 2, vec![0.25, 0.25, 0.0, 0.5]).unwrap();
        let c2 = CostMatrix::from_rows(2, 2, vec![1.0, 2.0, 0.5, 3.0]).unwrap();
        let c2x2 = CostMatrix::from_rows(2, 2, vec![2.0, 4.0, 1.0, 6.0]).unwrap();
        let base = plan_cost(&p2, &c2).unwrap();
        assert!(base >= 0.0);
        assert_abs_diff_eq!(plan_cost(&p2, &c2x2).unwrap(), 2.0 * base, epsilon = 1e-15);
        assert!(matches!(plan_cost(&p, &c2), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn empty_measures_are_stationary() {
        let mu = atoms(&[(0.0, 1.0)]);
        let none = AtomicMeasure::default();
        assert_eq!(sinkhorn(&mu, &none, 0.1, 1e-9, 10).unwrap_err(), Error::Stationary);
    }

    #[test]
    fn projection_examples() {
        let grid = uniform_grid(4).unwrap();
        let phi = P1Function::new(grid.clone(), vec![0.0, 2.0, 0.0, 0.0]).unwrap();
        let psi = project_lip1(&phi);
        let expect = [0.0, PI / 2.0, 0.0, 0.0];
        for (a, b) in psi.values().iter().zip(expect) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        let c = P1Function::constant(grid.clone(), 1.25);
        assert_eq!(project_lip1(&c), c);
        let fine = uniform_grid(32).unwrap();
        let tent = crate::circle::interpolate(|t| geodesic_distance(t, 1.0) * 0.7, &fine).unwrap();
        let p = project_lip1(&tent);
        for (a, b) in p.values().iter().zip(tent.values()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-14);
        }
    }

    #[test]
    fn projection_is_pairwise_lipschitz() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [3, 9, 33, 64] {
            let grid = uniform_grid(n).unwrap();
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let psi = project_lip1(&P1Function::new(grid.clone(), v.clone()).unwrap());
            let nodes = grid.nodes();
            for i in 0..n {
                assert!(psi.values()[i] <= v[i]);
                for j in 0..n {
                    let d = geodesic_distance(nodes[i], nodes[j]);
                    assert!((psi.values()[i] - psi.values()[j]).abs() <= d + 1e-12);
                }
            }
            assert!(psi.lipschitz_seminorm() <= 1.0 + 1e-10);
        }
    }

    fn random_pair(rng: &mut ChaCha8Rng, n: usize) -> (std::sync::Arc<CircleGrid>, BalancedMeasurePair, RadialFunction) {
        let grid = uniform_grid(n).unwrap();
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = RadialFunction::disk(grid.clone(), 1.0).unwrap();
        let w = weighted_mass_vector(&f);
        let pair = balance_and_split(&NodalFunctional::new(grid.clone(), a).unwrap(), &w).unwrap();
        (grid, pair, f)
    }

    #[test]
    fn descent_matches_exact_transport() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let (_, pair, f) = random_pair(&mut rng, 8);
            let d = descent_direction(&pair, &f, &SinkhornOptions::default()).unwrap();
            let exact = pair.beta * exact_transport_cost(&pair.mu, &pair.nu).unwrap();
            assert_abs_diff_eq!(-d.predicted, exact, epsilon = 1e-5);
            // weak duality sandwich
            assert!(-d.predicted <= d.plan_cost + 1e-8);
            assert!(d.marginal_residual <= 1e-9, "{} {} {}", d.marginal_residual, d.sinkhorn_converged, d.sinkhorn_iterations);
        }
    }

    #[test]
    fn descent_direction_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [16, 40] {
            let (_, pair, f) = random_pair(&mut rng, n);
            let d = descent_direction(&pair, &f, &SinkhornOptions::default()).unwrap();
            let w = weighted_mass_vector(&f);
            assert!(dot(&w, d.g.values()).abs() <= 1e-10);
            assert_abs_diff_eq!(d.g.lipschitz_seminorm(), 1.0, epsilon = 1e-10);
            assert!(d.predicted < 0.0);
        }
    }

    #[test]
    fn decreasing_eps_approaches_lp_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (_, pair, _) = random_pair(&mut rng, 8);
        let exact = exact_transport_cost(&pair.mu, &pair.nu).unwrap();
        let mut last = f64::INFINITY;
        for k in [0.1, 0.05, 0.025] {
            let r = sinkhorn(&pair.mu, &pair.nu, k * PI, 1e-12, 100_000).unwrap();
            let c = r.normalized_cost();
            assert!(c <= last + 1e-12);
            assert!(c >= exact - 1e-9);
            last = c;
        }
    }

    #[test]
    fn stationary_pair_is_rejected() {
        let grid = uniform_grid(8).unwrap();
        let f = RadialFunction::disk(grid.clone(), 1.0).unwrap();
        let w = weighted_mass_vector(&f);
        let pair = balance_and_split(&NodalFunctional::new(grid, w.clone()).unwrap(), &w).unwrap();
        assert_eq!(
            descent_direction(&pair, &f, &SinkhornOptions::default()).unwrap_err(),
            Error::Stationary
        );
    }

    #[test]
    fn schedule_halves_to_floor() {
        let s = SinkhornOptions::default().schedule(PI);
        assert_abs_diff_eq!(s[0], 0.1 * PI, epsilon = 1e-15);
        assert!(*s.last().unwrap() <= 1e-8 * PI);
        assert!(s[s.len() - 2] > 1e-8 * PI);
    }
}
