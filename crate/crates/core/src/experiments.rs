//! The convergence tables, the optimisation runs and the oracle report.
//!
//! Every experiment returns plain numbers; [`crate::export`] turns them into
//! files.

use std::f64::consts::{PI, TAU};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::circle::{interpolate, uniform_grid, weighted_mass_vector, CircleGrid, P1Function, RadialFunction};
use crate::export::{cell, fmt_float, Table};
use crate::fem2d::ReferenceMesh;
use crate::measure::{balance_and_split, chi_functional, manufactured_atoms, Functional, NodalFunctional};
use crate::optimize::{run, IterateLog, Method, OptimizerConfig};
use crate::oracle::exact_transport_cost;
use crate::relax::{solve_lip1_exact_small, solve_plaplace, solve_viscosity, PLAPLACE_TOL};
use crate::shapederiv::{assemble_derivative, energy, EnergySpec};
use crate::transport::{descent_direction, Descent, SinkhornOptions};
use crate::{Error, Result};

/// `-π²/20`, the limit of `∫ χ g_∞`.
pub const CHI_OPTIMUM: f64 = -PI * PI / 20.0;

/// `log(e₁/e₀) / log(x₁/x₀)`.
pub fn eoc(e0: f64, e1: f64, x0: f64, x1: f64) -> f64 {
    (e1 / e0).ln() / (x1 / x0).ln()
}

/// `(p/(p-1))^{p-1} |Ω| / p` on the unit circle.
pub fn p_bound(p: f64) -> f64 {
    (p / (p - 1.0)).powf(p - 1.0) * TAU / p
}

fn unit_circle(n: usize) -> Result<RadialFunction> {
    RadialFunction::disk(uniform_grid(n)?, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PRow {
    /// `None` for the transport row.
    pub p: Option<f64>,
    /// `∫ χ g_p`.
    pub descent: f64,
    /// `π²/20 + ∫ χ g_p`.
    pub gap: f64,
    pub eoc: Option<f64>,
    pub iterations: usize,
    /// Marginal residual for the transport row, KKT residual otherwise.
    pub residual: f64,
    pub error: Option<String>,
}

/// The `p → ∞` sweep on the indicator functional `χ`.
pub fn p_sweep(n: usize, ps: &[f64], opts: &SinkhornOptions) -> Result<Vec<PRow>> {
    let f = unit_circle(n)?;
    let chi = chi_functional(f.grid().clone());
    let mut rows: Vec<PRow> = ps
        .par_iter()
        .map(|&p| match solve_plaplace(&chi, &f, p, PLAPLACE_TOL) {
            Ok(s) => PRow {
                p: Some(p),
                descent: s.descent,
                gap: s.descent - CHI_OPTIMUM,
                eoc: None,
                iterations: s.iterations,
                residual: s.kkt_residual,
                error: None,
            },
            Err(e) => PRow {
                p: Some(p),
                descent: f64::NAN,
                gap: f64::NAN,
                eoc: None,
                iterations: 0,
                residual: f64::NAN,
                error: Some(e.to_string()),
            },
        })
        .collect();
    for k in 1..rows.len() {
        let (a, b) = (&rows[k - 1], &rows[k]);
        rows[k].eoc = Some(eoc(a.gap, b.gap, a.p.unwrap(), b.p.unwrap()));
    }
    let w = weighted_mass_vector(&f);
    let row = match balance_and_split(&chi, &w).and_then(|pair| descent_direction(&pair, &f, opts)) {
        Ok(d) => PRow {
            p: None,
            descent: d.predicted,
            gap: d.predicted - CHI_OPTIMUM,
            eoc: None,
            iterations: d.sinkhorn_iterations,
            residual: d.marginal_residual,
            error: None,
        },
        Err(e) => PRow {
            p: None,
            descent: f64::NAN,
            gap: f64::NAN,
            eoc: None,
            iterations: 0,
            residual: f64::NAN,
            error: Some(e.to_string()),
        },
    };
    rows.push(row);
    Ok(rows)
}

pub fn p_sweep_table(rows: &[PRow]) -> Table {
    let mut t = Table::new(&["p", "gap", "eoc", "descent", "bound", "iterations", "residual", "error"]);
    for r in rows {
        t.push(vec![
            r.p.map_or("inf".into(), fmt_float),
            fmt_float(r.gap),
            cell(r.eoc),
            fmt_float(r.descent),
            cell(r.p.map(p_bound)),
            r.iterations.to_string(),
            fmt_float(r.residual),
            r.error.clone().unwrap_or_default(),
        ]);
    }
    t
}

#[derive(Debug, Clone, PartialEq)]
pub struct HRow {
    pub n: usize,
    pub h: f64,
    pub value: f64,
    pub error: f64,
    pub eoc: Option<f64>,
    /// Error against a second reference, when one is given.
    pub alt_error: Option<f64>,
}

fn fill_eoc(rows: &mut [HRow]) {
    for k in 1..rows.len() {
        let (a, b) = (&rows[k - 1], &rows[k]);
        rows[k].eoc = Some(eoc(a.error, b.error, a.h, b.h));
    }
}

/// Claimed value of `W₁(μ̃⁺, μ̃⁻)` for the manufactured atoms.
pub const MANUFACTURED_CLAIM: f64 = 3.0 * PI - 4.0;
/// `W₁(μ̃⁺, μ̃⁻)` as computed by the exact circle oracle.
pub const MANUFACTURED_EXACT: f64 = 4.0 * PI - 8.0;

/// Transport descent for `μ̃` on the uniform grid with `n` nodes.
pub fn manufactured_descent(n: usize, opts: &SinkhornOptions) -> Result<Descent> {
    let f = unit_circle(n)?;
    let a = NodalFunctional::from_signed_atoms(f.grid().clone(), &manufactured_atoms());
    let pair = balance_and_split(&a, &weighted_mass_vector(&f))?;
    descent_direction(&pair, &f, opts)
}

/// Errors `3π − 4 + ∫ g_h dμ̃` (and against the oracle value) on uniform grids.
pub fn h_manufactured(ns: &[usize], opts: &SinkhornOptions) -> Result<Vec<HRow>> {
    let values: Vec<Result<f64>> = ns
        .par_iter()
        .map(|&n| manufactured_descent(n, opts).map(|d| d.predicted))
        .collect();
    let mut rows = Vec::new();
    for (&n, v) in ns.iter().zip(values) {
        let value = v?;
        rows.push(HRow {
            n,
            h: TAU / n as f64,
            value,
            error: (MANUFACTURED_CLAIM + value).abs(),
            eoc: None,
            alt_error: Some((MANUFACTURED_EXACT + value).abs()),
        });
    }
    fill_eoc(&mut rows);
    Ok(rows)
}

pub fn h_table(rows: &[HRow], alt_name: Option<&str>) -> Table {
    let mut header = vec!["n", "h", "value", "error", "eoc"];
    header.extend(alt_name);
    let mut t = Table::new(&header);
    for r in rows {
        let mut row = vec![
            r.n.to_string(),
            fmt_float(r.h),
            fmt_float(r.value),
            fmt_float(r.error),
            cell(r.eoc),
        ];
        if alt_name.is_some() {
            row.push(cell(r.alt_error));
        }
        t.push(row);
    }
    t
}

/// The initial square `(−√π, √π)²` on a mesh with `n` boundary nodes.
pub fn initial_square(n: usize, rings: usize) -> Result<(Arc<ReferenceMesh>, RadialFunction)> {
    let reference = Arc::new(ReferenceMesh::with_boundary(n, rings)?);
    let f = RadialFunction::square(reference.grid().clone(), PI.sqrt())?;
    Ok((reference, f))
}

/// `⟨J′(f)_h, g_h⟩` for the tracking problem at the initial square.
pub fn first_descent(n: usize, rings: usize, opts: &SinkhornOptions) -> Result<Descent> {
    let (reference, f) = initial_square(n, rings)?;
    let a = assemble_derivative(&f, &EnergySpec::laplace(), &reference)?;
    let pair = balance_and_split(&a, &weighted_mass_vector(&f))?;
    descent_direction(&pair, &f, opts)
}

/// First descent values on refined meshes, `rings = n / ring_divisor`; errors
/// are against the finest level, which carries no error of its own.
pub fn h_shape(ns: &[usize], ring_divisor: usize, opts: &SinkhornOptions) -> Result<Vec<HRow>> {
    let mut values = Vec::new();
    for &n in ns {
        let rings = (n / ring_divisor).max(1);
        values.push(first_descent(n, rings, opts)?.predicted);
    }
    let Some(&finest) = values.last() else {
        return Ok(Vec::new());
    };
    let mut rows: Vec<HRow> = ns
        .iter()
        .zip(&values)
        .map(|(&n, &value)| HRow {
            n,
            h: TAU / n as f64,
            value,
            error: (value - finest).abs(),
            eoc: None,
            alt_error: None,
        })
        .collect();
    let last = rows.len() - 1;
    fill_eoc(&mut rows[..last]);
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Problem {
    /// `F = 0`, `Z = −|x₁| − |x₂|`, linear energy.
    NoPde,
    /// `F = Z = 1 − |x|²`, tracking energy.
    Laplace,
}

impl Problem {
    pub fn spec(&self) -> EnergySpec {
        match self {
            Problem::NoPde => EnergySpec::no_pde(),
            Problem::Laplace => EnergySpec::laplace(),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Problem::NoPde => "nopde",
            Problem::Laplace => "laplace",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "nopde" => Ok(Problem::NoPde),
            "laplace" => Ok(Problem::Laplace),
            _ => Err(Error::InvalidParameter(format!("unknown problem `{s}`"))),
        }
    }
}

/// Energy of the ball of area `4π` for the tracking problem, `61π/15`.
pub const LAPLACE_BALL_ENERGY: f64 = 61.0 * PI / 15.0;

/// One optimisation run per method from the initial square.
pub fn optimize(
    problem: Problem,
    methods: &[Method],
    n: usize,
    rings: usize,
    base: &OptimizerConfig,
    snapshot_every: usize,
) -> Result<Vec<IterateLog>> {
    let (reference, f) = initial_square(n, rings)?;
    let spec = problem.spec();
    methods
        .par_iter()
        .map(|&method| {
            let config = OptimizerConfig { method, ..base.clone() };
            run(&f, &spec, &reference, &config, snapshot_every)
        })
        .collect()
}

pub fn trace_table(log: &IterateLog) -> Table {
    let mut t = Table::new(&[
        "step",
        "energy",
        "energy_pre",
        "energy_post",
        "predicted",
        "step_size",
        "area",
        "trials",
        "inner_iterations",
        "seconds",
    ]);
    t.push(vec![
        "0".into(),
        fmt_float(log.initial_energy),
        String::new(),
        fmt_float(log.initial_energy),
        String::new(),
        String::new(),
        fmt_float(log.initial_area),
        "0".into(),
        "0".into(),
        "0.0".into(),
    ]);
    for r in &log.records {
        t.push(vec![
            r.step.to_string(),
            fmt_float(r.energy),
            fmt_float(r.energy_pre),
            fmt_float(r.energy_post),
            fmt_float(r.predicted),
            fmt_float(r.step_size),
            fmt_float(r.area),
            r.trials.to_string(),
            r.inner_iterations.to_string(),
            fmt_float(r.seconds),
        ]);
    }
    t
}

/// Random 1-Lipschitz direction with modes that see the quarter-turn
/// symmetry of the square.
pub fn random_lip1(rng: &mut impl Rng, grid: &Arc<CircleGrid>) -> Result<P1Function> {
    let (a, b, c) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.0..TAU));
    let (d, e) = (rng.gen_range(0.5..1.0), rng.gen_range(0.2..0.5));
    let g = interpolate(
        |t: f64| a * t.cos() + b * (2.0 * t + c).sin() + d * (4.0 * t + c).cos() + e,
        grid,
    )?;
    let lip = g.lipschitz_seminorm();
    Ok(g.scaled(1.0 / lip))
}

/// Duality check: transport dual descent against the exact plan cost.
#[derive(Debug, Clone, PartialEq)]
pub struct DualityCase {
    pub dual_descent: f64,
    /// `min` plan cost from the circle oracle.
    pub plan_cost: f64,
    /// `min` over Lipschitz-1 P1 functions from the LP.
    pub lp_value: f64,
    pub marginal_residual: f64,
}

impl DualityCase {
    pub fn mismatch(&self) -> f64 {
        (self.dual_descent + self.plan_cost).abs()
    }
}

/// `count` random balanced functionals on the uniform grid with `n` nodes.
pub fn duality_cases(count: usize, n: usize, seed: u64, opts: &SinkhornOptions) -> Result<Vec<DualityCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = unit_circle(n)?;
    let w = weighted_mass_vector(&f);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let coeffs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a = NodalFunctional::new(f.grid().clone(), coeffs)?;
        let pair = balance_and_split(&a, &w)?;
        let d = descent_direction(&pair, &f, opts)?;
        let lp = solve_lip1_exact_small(&pair.balanced, &f)?;
        out.push(DualityCase {
            dual_descent: pair.balanced.apply(&d.g)?,
            plan_cost: pair.beta * exact_transport_cost(&pair.mu, &pair.nu)?,
            lp_value: lp.descent,
            marginal_residual: d.marginal_residual,
        });
    }
    Ok(out)
}

/// Finite-difference check of `⟨J′(f), g⟩` at the initial square.
#[derive(Debug, Clone, PartialEq)]
pub struct FdCase {
    pub problem: Problem,
    pub exact: f64,
    /// `(t, |FD(t) − exact| / |exact|)`.
    pub errors: Vec<(f64, f64)>,
}

pub fn fd_cases(problem: Problem, n: usize, rings: usize, directions: usize, seed: u64, ts: &[f64]) -> Result<Vec<FdCase>> {
    let (reference, f) = initial_square(n, rings)?;
    let spec = problem.spec();
    let a = assemble_derivative(&f, &spec, &reference)?;
    let j0 = energy(&f, &spec, &reference)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for _ in 0..directions {
        let g = random_lip1(&mut rng, reference.grid())?;
        let exact = a.apply(&g)?;
        let mut errors = Vec::new();
        for &t in ts {
            let ft = RadialFunction::new(f.function().axpby(1.0, &g, t)?)?;
            let fd = (energy(&ft, &spec, &reference)? - j0) / t;
            errors.push((t, (fd - exact).abs() / exact.abs()));
        }
        out.push(FdCase { problem, exact, errors });
    }
    Ok(out)
}

/// Viscosity gap `descent(g^ε) − descent(g_exact)` on `χ` at `n ≤ 32`.
pub fn viscosity_gaps(n: usize, eps: &[f64]) -> Result<Vec<(f64, f64)>> {
    let f = unit_circle(n)?;
    let chi = chi_functional(f.grid().clone());
    let exact = solve_lip1_exact_small(&chi, &f)?.descent;
    eps.iter()
        .map(|&e| Ok((e, solve_viscosity(&chi, &f, e, 1e-12)?.descent - exact)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Cross-validation of the solvers against their oracles.
pub fn oracle_check(seed: u64) -> Result<Vec<Check>> {
    let opts = SinkhornOptions::default();
    let mut checks = Vec::new();
    let clock = Instant::now();

    let cases = duality_cases(20, 8, seed, &opts)?;
    let worst = cases.iter().map(DualityCase::mismatch).fold(0.0, f64::max);
    let lp_worst = cases.iter().map(|c| (c.lp_value + c.plan_cost).abs()).fold(0.0, f64::max);
    checks.push(Check {
        name: "transport-vs-lp".into(),
        passed: worst <= 1e-6,
        detail: format!("max |dual + plan cost| = {worst:e}, LP vs oracle {lp_worst:e}"),
    });

    for problem in [Problem::NoPde, Problem::Laplace] {
        let fds = fd_cases(problem, 32, 8, 3, seed, &[1e-2, 1e-3, 1e-4])?;
        let ok = fds.iter().all(|c| {
            let e: Vec<f64> = c.errors.iter().map(|x| x.1).collect();
            e[2] <= 1e-2 && e[0] > e[1] && e[1] > e[2]
        });
        let worst = fds.iter().map(|c| c.errors[2].1).fold(0.0, f64::max);
        checks.push(Check {
            name: format!("fd-gradient-{}", problem.label()),
            passed: ok,
            detail: format!("max relative error at t = 1e-4: {worst:e}"),
        });
    }

    let ps = [2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0];
    let rows = p_sweep(128, &ps, &opts)?;
    let inf = rows.last().expect("transport row").descent;
    let ok = rows
        .iter()
        .filter_map(|r| r.p.map(|p| r.descent <= inf + p_bound(p)))
        .all(|b| b);
    checks.push(Check {
        name: "p-relaxation-bound".into(),
        passed: ok,
        detail: format!("descent(g_p) ≤ descent(g_∞) + (p/(p−1))^(p−1)·2π/p for p in {ps:?}"),
    });

    let gaps = viscosity_gaps(32, &[0.1, 0.01])?;
    let ok = gaps.iter().all(|&(e, gap)| gap >= -1e-12 && gap <= e / 4.0 * TAU);
    checks.push(Check {
        name: "viscosity-bound".into(),
        passed: ok,
        detail: format!("gaps {gaps:?}"),
    });

    checks.push(Check {
        name: "elapsed".into(),
        passed: true,
        detail: format!("{:.1} s", clock.elapsed().as_secs_f64()),
    });
    Ok(checks)
}
