//! Relaxed steepest-descent problems on the circle: p-Laplacian
//! minimisation, the viscosity-regularised Lipschitz problem, and an exact
//! linear program for small grids.
//!
//! All three minimise over P1 functions `g` with `⟨w, g⟩ = 0`, where `w` is
//! the weighted mass vector of the radial function.

use nalgebra::{DMatrix, DVector};

use crate::circle::{dot, weighted_mass_vector, P1Function, RadialFunction};
use crate::measure::{lambda_star, Functional, NodalFunctional};
use crate::{lp, Error, Result};

/// Smoothing inside the p-flux `(s² + δ²)^{(p-2)/2} s`.
pub const FLUX_DELTA: f64 = 1e-10;
/// Relative KKT tolerance, scaled by `‖F‖₁`.
pub const PLAPLACE_TOL: f64 = 1e-10;
pub const MAX_NEWTON_STEPS: usize = 200;
pub const MAX_HALVINGS: usize = 30;
/// Largest grid accepted by [`solve_lip1_exact_small`].
pub const EXACT_LIMIT: usize = 32;

#[derive(Debug, Clone)]
pub struct RelaxSolution {
    pub g: P1Function,
    /// `p` for the p-Laplacian, `ε` for the viscosity problem, `∞` for the LP.
    pub p_or_eps: f64,
    pub kkt_residual: f64,
    /// `⟨F, g⟩`.
    pub descent: f64,
    pub iterations: usize,
    /// `(iteration, residual, energy)`.
    pub trace: Vec<(usize, f64, f64)>,
}

fn check_grid(functional: &NodalFunctional, f: &RadialFunction) -> Result<Vec<f64>> {
    if !functional.grid().same_as(f.grid()) {
        return Err(Error::GridMismatch);
    }
    Ok(weighted_mass_vector(f))
}

/// Shift `values` so that `⟨w, g⟩ = 0`.
fn centre(values: &mut [f64], w: &[f64]) {
    let shift = dot(w, values) / w.iter().sum::<f64>();
    values.iter_mut().for_each(|v| *v -= shift);
}

fn flux(s: f64, p: f64) -> f64 {
    (s * s + FLUX_DELTA * FLUX_DELTA).powf(0.5 * (p - 2.0)) * s
}

fn flux_prime(s: f64, p: f64) -> f64 {
    let q = s * s + FLUX_DELTA * FLUX_DELTA;
    q.powf(0.5 * (p - 2.0)) + (p - 2.0) * s * s * q.powf(0.5 * (p - 4.0))
}

struct PProblem<'a> {
    arcs: &'a [f64],
    a: &'a [f64],
    w: &'a [f64],
    p: f64,
}

impl PProblem<'_> {
    fn n(&self) -> usize {
        self.a.len()
    }

    fn slopes(&self, g: &[f64]) -> Vec<f64> {
        let n = self.n();
        (0..n).map(|e| (g[(e + 1) % n] - g[e]) / self.arcs[e]).collect()
    }

    fn energy(&self, g: &[f64]) -> f64 {
        let s = self.slopes(g);
        let smooth: f64 = s
            .iter()
            .zip(self.arcs)
            .map(|(s, h)| s.abs().powf(self.p) * h / self.p)
            .sum();
        smooth + dot(self.a, g)
    }

    /// Stationarity `K(g) + a + λw` followed by the constraint `⟨w, g⟩`.
    fn residual(&self, g: &[f64], lambda: f64) -> Vec<f64> {
        let n = self.n();
        let mut r: Vec<f64> = self
            .a
            .iter()
            .zip(self.w)
            .map(|(a, w)| a + lambda * w)
            .collect();
        for (e, s) in self.slopes(g).into_iter().enumerate() {
            let q = flux(s, self.p);
            r[e] -= q;
            r[(e + 1) % n] += q;
        }
        r.push(dot(self.w, g));
        r
    }

    fn jacobian(&self, g: &[f64]) -> DMatrix<f64> {
        let n = self.n();
        let mut j = DMatrix::zeros(n + 1, n + 1);
        for (e, s) in self.slopes(g).into_iter().enumerate() {
            let k = flux_prime(s, self.p) / self.arcs[e];
            let (a, b) = (e, (e + 1) % n);
            j[(a, a)] += k;
            j[(b, b)] += k;
            j[(a, b)] -= k;
            j[(b, a)] -= k;
        }
        for i in 0..n {
            j[(i, n)] = self.w[i];
            j[(n, i)] = self.w[i];
        }
        j
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn bordered_solve(j: DMatrix<f64>, rhs: &[f64]) -> Result<Vec<f64>> {
    j.lu()
        .solve(&DVector::from_column_slice(rhs))
        .map(|x| x.iter().copied().collect())
        .ok_or_else(|| Error::Precondition("singular KKT matrix".into()))
}

/// Damped Newton on the bordered system for one value of `p`.
fn newton(
    prob: &PProblem,
    g: &mut Vec<f64>,
    lambda: &mut f64,
    tol: f64,
    budget: usize,
    trace: &mut Vec<(usize, f64, f64)>,
    offset: usize,
) -> Result<(usize, f64)> {
    let n = prob.n();
    let mut r = prob.residual(g, *lambda);
    let mut res = norm_inf(&r);
    for it in 0..budget {
        trace.push((offset + it, res, prob.energy(g)));
        if res <= tol {
            return Ok((it, res));
        }
        let rhs: Vec<f64> = r.iter().map(|x| -x).collect();
        let step = bordered_solve(prob.jacobian(g), &rhs)?;
        let base = norm2(&r);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = (0..n).map(|i| g[i] + t * step[i]).collect();
            let trial_lambda = *lambda + t * step[n];
            let tr = prob.residual(&trial, trial_lambda);
            if norm2(&tr) < base {
                *g = trial;
                *lambda = trial_lambda;
                r = tr;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::LineSearchFailed);
        }
        res = norm_inf(&r);
    }
    if res <= tol {
        return Ok((budget, res));
    }
    Err(Error::NotConverged {
        solver: "p-Laplace Newton",
        iterations: budget,
        residual: res,
    })
}

/// Minimise `Σ_e |s_e|^p h_e / p + ⟨F, g⟩` subject to `⟨w, g⟩ = 0`.
///
/// The `p = 2` problem is linear and solved directly; larger `p` are reached
/// by continuation, each stage warm-started from the previous one. `tol` is
/// relative to `‖F‖₁`.
pub fn solve_plaplace(
    functional: &NodalFunctional,
    f: &RadialFunction,
    p: f64,
    tol: f64,
) -> Result<RelaxSolution> {
    if !(p >= 2.0) || !p.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "p-Laplace needs p >= 2, got {p}"
        )));
    }
    let w = check_grid(functional, f)?;
    let grid = functional.grid().clone();
    let n = grid.len();
    let scale = functional.l1_norm();
    if scale == 0.0 {
        return Ok(RelaxSolution {
            g: P1Function::constant(grid, 0.0),
            p_or_eps: p,
            kkt_residual: 0.0,
            descent: 0.0,
            iterations: 0,
            trace: Vec::new(),
        });
    }
    let abs_tol = tol * scale;
    let mut prob = PProblem {
        arcs: grid.arcs(),
        a: functional.coeffs(),
        w: &w,
        p: 2.0,
    };

    // exact p = 2 solve
    let rhs: Vec<f64> = functional
        .coeffs()
        .iter()
        .map(|a| -a)
        .chain(std::iter::once(0.0))
        .collect();
    let zero = vec![0.0; n];
    let x = bordered_solve(prob.jacobian(&zero), &rhs)?;
    let mut g: Vec<f64> = x[..n].to_vec();
    let mut lambda = x[n];
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut res = norm_inf(&prob.residual(&g, lambda));
    trace.push((0, res, prob.energy(&g)));

    let mut stage = 2.0;
    while stage < p {
        stage = (stage * 1.5).min(p);
        if p - stage < 0.25 {
            stage = p;
        }
        prob.p = stage;
        let (it, r) = newton(
            &prob,
            &mut g,
            &mut lambda,
            abs_tol,
            MAX_NEWTON_STEPS,
            &mut trace,
            iterations,
        )?;
        iterations += it;
        res = r;
    }
    // the constraint row is solved to roundoff; remove what is left
    centre(&mut g, &w);
    let g = P1Function::new(grid, g)?;
    let descent = functional.apply(&g)?;
    Ok(RelaxSolution {
        g,
        p_or_eps: p,
        kkt_residual: res,
        descent,
        iterations,
        trace,
    })
}

/// Tail sums `M_e = Σ_{i > e} m_i` of the balanced coefficients; with them
/// `⟨m, g⟩ = Σ_e h_e s_e M_e` for any nodal `g` with slopes `s`.
fn tail_sums(m: &[f64]) -> Vec<f64> {
    let n = m.len();
    let mut tails = vec![0.0; n];
    let mut acc = 0.0;
    for e in (0..n).rev() {
        tails[e] = acc;
        acc += m[e];
    }
    tails
}

/// Nodal values from slopes, starting at zero.
fn integrate_slopes(slopes: &[f64], arcs: &[f64]) -> Vec<f64> {
    let mut g = Vec::with_capacity(slopes.len());
    let mut acc = 0.0;
    for (s, h) in slopes.iter().zip(arcs) {
        g.push(acc);
        acc += s * h;
    }
    g
}

fn balanced_coeffs(functional: &NodalFunctional, w: &[f64]) -> Result<Vec<f64>> {
    let lambda = lambda_star(functional, w)?;
    let mut m: Vec<f64> = functional
        .coeffs()
        .iter()
        .zip(w)
        .map(|(a, wi)| a - lambda * wi)
        .collect();
    let drift = m.iter().sum::<f64>() / m.len() as f64;
    m.iter_mut().for_each(|x| *x -= drift);
    Ok(m)
}

/// Minimise `⟨F, g⟩ + (ε/2) Σ_e h_e s_e²` over `|s_e| ≤ 1`, `⟨w, g⟩ = 0`.
///
/// In slope variables the problem separates once the periodicity
/// constraint `Σ h_e s_e = 0` carries a multiplier `ρ`:
/// `s_e = clamp(-(M_e + ρ)/ε, -1, 1)`. The closure is monotone in `ρ`, so
/// the multiplier is found by bisection and then fixed exactly on its
/// linear piece.
pub fn solve_viscosity(
    functional: &NodalFunctional,
    f: &RadialFunction,
    eps: f64,
    tol: f64,
) -> Result<RelaxSolution> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "viscosity must be positive, got {eps}"
        )));
    }
    let w = check_grid(functional, f)?;
    let grid = functional.grid().clone();
    let arcs = grid.arcs();
    let m = balanced_coeffs(functional, &w)?;
    let tails = tail_sums(&m);
    let slopes_at = |rho: f64| -> Vec<f64> {
        tails
            .iter()
            .map(|t| (-(t + rho) / eps).clamp(-1.0, 1.0))
            .collect()
    };
    let closure = |rho: f64| -> f64 { dot(&slopes_at(rho), arcs) };

    let spread = tails.iter().fold(0.0f64, |a, t| a.max(t.abs())) + eps;
    let (mut lo, mut hi) = (-spread, spread);
    let mut iterations = 0;
    while hi - lo > 1e-15 * spread && iterations < 200 {
        let mid = 0.5 * (lo + hi);
        if closure(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    let mut rho = 0.5 * (lo + hi);
    // on the piece containing ρ the free slopes are affine in ρ
    let free: Vec<usize> = (0..tails.len())
        .filter(|&e| (tails[e] + rho).abs() < eps)
        .collect();
    let free_len: f64 = free.iter().map(|&e| arcs[e]).sum();
    if free_len > 0.0 {
        let c = closure(rho);
        let candidate = rho + c * eps / free_len;
        if closure(candidate).abs() <= c.abs() {
            rho = candidate;
        }
    }
    let slopes = slopes_at(rho);
    let kkt = dot(&slopes, arcs).abs();
    if kkt > tol.max(1e-12 * arcs.iter().sum::<f64>()) {
        return Err(Error::NotConverged {
            solver: "viscosity multiplier",
            iterations,
            residual: kkt,
        });
    }
    let mut values = integrate_slopes(&slopes, arcs);
    centre(&mut values, &w);
    let dissipation: f64 = slopes.iter().zip(arcs).map(|(s, h)| s * s * h).sum();
    let g = P1Function::new(grid.clone(), values)?;
    let descent = functional.apply(&g)?;
    let energy = descent + 0.5 * eps * dissipation;
    Ok(RelaxSolution {
        g,
        p_or_eps: eps,
        kkt_residual: kkt,
        descent,
        iterations,
        trace: vec![(iterations, kkt, energy)],
    })
}

/// Exact discrete steepest descent by linear programming, for `n ≤ 32`.
///
/// Adjacent slope bounds are enough: for a P1 function the sup of
/// difference quotients is attained on neighbouring nodes. The objective
/// uses the balanced coefficients, which annihilate constants, so the
/// mass constraint is imposed afterwards by a shift.
pub fn solve_lip1_exact_small(
    functional: &NodalFunctional,
    f: &RadialFunction,
) -> Result<RelaxSolution> {
    let w = check_grid(functional, f)?;
    let grid = functional.grid().clone();
    let n = grid.len();
    if n > EXACT_LIMIT {
        return Err(Error::TooLarge {
            n,
            limit: EXACT_LIMIT,
        });
    }
    let m = balanced_coeffs(functional, &w)?;
    let arcs = grid.arcs();
    // y = g + const >= 0;  ±(y_{e+1} - y_e) <= h_e
    let mut a = vec![0.0; 2 * n * n];
    let mut b = Vec::with_capacity(2 * n);
    for e in 0..n {
        let next = (e + 1) % n;
        a[(2 * e) * n + next] += 1.0;
        a[(2 * e) * n + e] -= 1.0;
        a[(2 * e + 1) * n + next] -= 1.0;
        a[(2 * e + 1) * n + e] += 1.0;
        b.push(arcs[e]);
        b.push(arcs[e]);
    }
    let sol = lp::minimize(&m, &a, &b)?;
    let mut values = sol.x;
    centre(&mut values, &w);
    let g = P1Function::new(grid, values)?;
    let descent = functional.apply(&g)?;
    let kkt = (descent - sol.objective).abs();
    Ok(RelaxSolution {
        g,
        p_or_eps: f64::INFINITY,
        kkt_residual: kkt,
        descent,
        iterations: sol.pivots,
        trace: vec![(sol.pivots, kkt, descent)],
    })
}

/// Closed-form p-Laplace minimiser in slope space, used to check the
/// Newton solver: `s_e = -sign(M_e + ρ)|M_e + ρ|^{1/(p-1)}` with `ρ`
/// closing the loop.
pub fn plaplace_slopes_reference(
    functional: &NodalFunctional,
    f: &RadialFunction,
    p: f64,
) -> Result<P1Function> {
    let w = check_grid(functional, f)?;
    let grid = functional.grid().clone();
    let arcs = grid.arcs();
    let m = balanced_coeffs(functional, &w)?;
    let tails = tail_sums(&m);
    let slopes_at = |rho: f64| -> Vec<f64> {
        tails
            .iter()
            .map(|t| {
                let x = t + rho;
                -x.signum() * x.abs().powf(1.0 / (p - 1.0))
            })
            .collect()
    };
    let spread = tails.iter().fold(0.0f64, |a, t| a.max(t.abs())) + 1.0;
    let (mut lo, mut hi) = (-spread, spread);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if dot(&slopes_at(mid), arcs) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut values = integrate_slopes(&slopes_at(0.5 * (lo + hi)), arcs);
    centre(&mut values, &w);
    P1Function::new(grid, values)
}
