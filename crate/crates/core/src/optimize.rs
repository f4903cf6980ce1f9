//! Armijo descent with volume projection.
//!
//! Each step linearises the energy at `f`, picks a 1-Lipschitz direction `g`
//! with `∫ f g = 0`, backtracks `s = ½, ¼, …` until `f + s g` stays positive
//! and satisfies the Armijo inequality, then rescales to the target area.

use std::f64::consts::TAU;
use std::sync::Arc;
use std::time::Instant;

use crate::circle::{star_area, weighted_mass_vector, P1Function, RadialFunction};
use crate::fem2d::ReferenceMesh;
use crate::measure::{balance_and_split, Functional, NodalFunctional};
use crate::relax::{solve_plaplace, PLAPLACE_TOL};
use crate::shapederiv::{energy, linearize, EnergySpec};
use crate::transport::{descent_direction, SinkhornOptions};
use crate::{Error, Result};

/// How the descent direction is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    /// p-Laplacian relaxation, renormalised to Lipschitz constant one. `p = 2`
    /// is the Hilbertian `H¹` gradient.
    PLaplace(f64),
    /// Kantorovich potential from the entropic transport solve.
    Sinkhorn,
}

impl Method {
    /// Short name used in file names: `p2`, `p4`, `sinkhorn`.
    pub fn label(&self) -> String {
        match self {
            Method::PLaplace(p) => format!("p{p}"),
            Method::Sinkhorn => "sinkhorn".into(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        if s == "sinkhorn" {
            return Ok(Method::Sinkhorn);
        }
        let p = s
            .strip_prefix('p')
            .and_then(|p| p.parse::<f64>().ok())
            .filter(|p| *p >= 2.0 && p.is_finite())
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method `{s}`")))?;
        Ok(Method::PLaplace(p))
    }
}

/// Transport schedule used inside the descent loop. Near-stationary
/// measures make the smallest levels slow, and a direction accurate to
/// `1e-5 · max C` is far below the descents the loop works with. The
/// over-relaxed update roughly halves the iteration count here.
pub const OPTIMIZER_SINKHORN: SinkhornOptions = SinkhornOptions {
    eps_start: 0.1,
    eps_min: 1e-5,
    tol: 1e-9,
    max_iter: 100_000,
    relaxation: 1.8,
};

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub method: Method,
    /// Armijo parameter, in `(0, 1)`.
    pub gamma: f64,
    /// First trial step, in `(0, 1)`.
    pub max_step: f64,
    /// Backtracking stops below this step.
    pub min_step: f64,
    pub max_steps: usize,
    pub target_area: f64,
    /// Trial radii must exceed this fraction of `mean(f)`.
    pub positivity_floor: f64,
    /// Stop when `β ≤ stationary_tol · ‖a‖₁`.
    pub stationary_tol: f64,
    /// Test the Armijo inequality at the rescaled trial instead of `f + s g`.
    pub projected_armijo: bool,
    pub sinkhorn: SinkhornOptions,
    pub newton_tol: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            method: Method::Sinkhorn,
            gamma: 1e-3,
            max_step: 0.5,
            min_step: 2f64.powi(-30),
            max_steps: 50,
            target_area: 2.0 * TAU,
            positivity_floor: 1e-6,
            stationary_tol: 1e-12,
            projected_armijo: false,
            sinkhorn: OPTIMIZER_SINKHORN,
            newton_tol: PLAPLACE_TOL,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::InvalidParameter(format!("{what} = {v}")));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma", self.gamma);
        }
        if !(self.max_step > 0.0 && self.max_step < 1.0) {
            return bad("max_step", self.max_step);
        }
        if !(self.min_step > 0.0 && self.min_step <= self.max_step) {
            return bad("min_step", self.min_step);
        }
        if !(self.target_area > 0.0 && self.target_area.is_finite()) {
            return bad("target_area", self.target_area);
        }
        if !(self.positivity_floor >= 0.0 && self.positivity_floor < 1.0) {
            return bad("positivity_floor", self.positivity_floor);
        }
        if let Method::PLaplace(p) = self.method {
            if !(p >= 2.0 && p.is_finite()) {
                return bad("p", p);
            }
        }
        Ok(())
    }
}

/// Rescale `f` so that its star area equals `target`.
pub fn project_area(f: &RadialFunction, target: f64) -> Result<RadialFunction> {
    let area = star_area(f);
    if !(area > 0.0) {
        return Err(Error::DegenerateDomain(area));
    }
    f.scaled((target / area).sqrt())
}

/// An accepted Armijo step.
#[derive(Debug, Clone)]
pub struct Step {
    pub step_size: f64,
    /// Energy at `f + s g`.
    pub trial_energy: f64,
    /// `project_area(f + s g)`.
    pub f: RadialFunction,
    pub trials: usize,
}

/// Backtracking line search from `f` along `g`.
///
/// `energy0 = J(f)` and `predicted = ⟨J′(f), g⟩ < 0` come from the caller's
/// linearisation. Trials whose mesh degenerates count as rejected.
pub fn armijo_step(
    f: &RadialFunction,
    g: &P1Function,
    energy0: f64,
    predicted: f64,
    spec: &EnergySpec,
    reference: &Arc<ReferenceMesh>,
    config: &OptimizerConfig,
) -> Result<Step> {
    if !(predicted < 0.0) {
        return Err(Error::Precondition(format!(
            "predicted descent must be negative, got {predicted:e}"
        )));
    }
    if !g.grid().same_as(f.grid()) {
        return Err(Error::GridMismatch);
    }
    let floor = config.positivity_floor * f.mean();
    let mut s = config.max_step;
    let mut trials = 0;
    while s >= config.min_step {
        trials += 1;
        let values: Vec<f64> = f.values().iter().zip(g.values()).map(|(f, g)| f + s * g).collect();
        if values.iter().all(|&v| v > floor) {
            let trial = RadialFunction::from_values(f.grid().clone(), values)?;
            let projected = project_area(&trial, config.target_area)?;
            let tested = if config.projected_armijo { &projected } else { &trial };
            match energy(tested, spec, reference) {
                Ok(e) if e - energy0 <= config.gamma * s * predicted => {
                    return Ok(Step {
                        step_size: s,
                        trial_energy: e,
                        f: projected,
                        trials,
                    });
                }
                Ok(_) | Err(Error::DegenerateMesh { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        s *= 0.5;
    }
    Err(Error::LineSearchFailed)
}

/// One accepted iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateRecord {
    pub step: usize,
    /// `J(f^k)`.
    pub energy: f64,
    /// `J(f^k + s g^k)`, before projection.
    pub energy_pre: f64,
    /// `J(f^{k+1})`, after projection.
    pub energy_post: f64,
    /// `⟨J′(f^k), g^k⟩`.
    pub predicted: f64,
    pub step_size: f64,
    /// `star_area(f^{k+1})`.
    pub area: f64,
    pub trials: usize,
    /// Sinkhorn or Newton iterations spent on the direction.
    pub inner_iterations: usize,
    pub seconds: f64,
}

impl IterateRecord {
    /// Whether the logged numbers satisfy the Armijo inequality.
    pub fn satisfies_armijo(&self, gamma: f64) -> bool {
        self.energy_pre - self.energy <= gamma * self.step_size * self.predicted
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    MaxSteps,
    Stationary,
    LineSearchFailed,
    Failed(Error),
}

#[derive(Debug, Clone)]
pub struct IterateLog {
    pub method: Method,
    pub initial_energy: f64,
    pub initial_area: f64,
    pub records: Vec<IterateRecord>,
    pub status: Status,
    /// Last iterate.
    pub f: RadialFunction,
    /// Iterates kept for snapshots, `(step, f)`.
    pub snapshots: Vec<(usize, RadialFunction)>,
}

impl IterateLog {
    pub fn final_energy(&self) -> f64 {
        self.records.last().map_or(self.initial_energy, |r| r.energy_post)
    }
}

struct Direction {
    g: P1Function,
    predicted: f64,
    iterations: usize,
}

fn direction(
    a: &NodalFunctional,
    f: &RadialFunction,
    config: &OptimizerConfig,
) -> Result<Option<Direction>> {
    let w = weighted_mass_vector(f);
    let pair = balance_and_split(a, &w)?;
    if pair.stationary || pair.beta <= config.stationary_tol * a.l1_norm() {
        return Ok(None);
    }
    let (g, iterations) = match config.method {
        Method::Sinkhorn => {
            let d = descent_direction(&pair, f, &config.sinkhorn)?;
            (d.g, d.sinkhorn_iterations)
        }
        Method::PLaplace(p) => {
            let s = solve_plaplace(a, f, p, config.newton_tol)?;
            let lip = s.g.lipschitz_seminorm();
            if !(lip > 0.0) {
                return Ok(None);
            }
            (s.g.scaled(1.0 / lip), s.iterations)
        }
    };
    let predicted = a.apply(&g)?;
    if !(predicted < 0.0) {
        return Ok(None);
    }
    Ok(Some(Direction { g, predicted, iterations }))
}

/// Run the descent from `initial`. `snapshot_every = 0` keeps only the first
/// and last iterates.
pub fn run(
    initial: &RadialFunction,
    spec: &EnergySpec,
    reference: &Arc<ReferenceMesh>,
    config: &OptimizerConfig,
    snapshot_every: usize,
) -> Result<IterateLog> {
    config.validate()?;
    if !initial.grid().same_as(reference.grid()) {
        return Err(Error::GridMismatch);
    }
    // the starting shape is put on the constraint too
    let mut f = project_area(initial, config.target_area)?;
    let mut log = IterateLog {
        method: config.method,
        initial_energy: f64::NAN,
        initial_area: star_area(&f),
        records: Vec::new(),
        status: Status::MaxSteps,
        f: f.clone(),
        snapshots: vec![(0, f.clone())],
    };
    let mut lin = match linearize(&f, spec, reference) {
        Ok(l) => l,
        Err(e) => {
            log.status = Status::Failed(e);
            return Ok(log);
        }
    };
    log.initial_energy = lin.evaluation.energy;
    for step in 1..=config.max_steps {
        let clock = Instant::now();
        let energy0 = lin.evaluation.energy;
        let dir = match direction(&lin.derivative, &f, config) {
            Ok(Some(d)) => d,
            Ok(None) => {
                log.status = Status::Stationary;
                break;
            }
            Err(e) => {
                log.status = Status::Failed(e);
                break;
            }
        };
        let accepted = match armijo_step(&f, &dir.g, energy0, dir.predicted, spec, reference, config) {
            Ok(s) => s,
            Err(Error::LineSearchFailed) => {
                log.status = Status::LineSearchFailed;
                break;
            }
            Err(e) => {
                log.status = Status::Failed(e);
                break;
            }
        };
        f = accepted.f;
        lin = match linearize(&f, spec, reference) {
            Ok(l) => l,
            Err(e) => {
                log.status = Status::Failed(e);
                break;
            }
        };
        log.records.push(IterateRecord {
            step,
            energy: energy0,
            energy_pre: accepted.trial_energy,
            energy_post: lin.evaluation.energy,
            predicted: dir.predicted,
            step_size: accepted.step_size,
            area: star_area(&f),
            trials: accepted.trials,
            inner_iterations: dir.iterations,
            seconds: clock.elapsed().as_secs_f64(),
        });
        if snapshot_every > 0 && step % snapshot_every == 0 {
            log.snapshots.push((step, f.clone()));
        }
    }
    let last = log.records.last().map_or(0, |r| r.step);
    if log.snapshots.last().map(|s| s.0) != Some(last) {
        log.snapshots.push((last, f.clone()));
    }
    log.f = f;
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circle::{uniform_grid, P1Function};
    use crate::shapederiv::EnergyKind;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn project_area_examples() {
        let grid = uniform_grid(64).unwrap();
        let one = RadialFunction::disk(grid.clone(), 1.0).unwrap();
        let area_one = star_area(&one);
        let scaled = project_area(&one, 4.0 * area_one).unwrap();
        assert!(scaled.values().iter().all(|&v| (v - 2.0).abs() < 1e-14));
        let sq = RadialFunction::square(grid, PI.sqrt()).unwrap();
        let target = 4.0 * PI;
        let p = project_area(&sq, target).unwrap();
        assert_relative_eq!(star_area(&p), target, max_relative = 1e-12);
        let again = project_area(&p, target).unwrap();
        for (a, b) in again.values().iter().zip(p.values()) {
            assert_relative_eq!(a, b, max_relative = 1e-14);
        }
    }

    #[test]
    fn method_labels_round_trip() {
        for m in [Method::PLaplace(2.0), Method::PLaplace(4.0), Method::Sinkhorn] {
            assert_eq!(Method::parse(&m.label()).unwrap(), m);
        }
        assert!(Method::parse("p1").is_err());
        assert!(Method::parse("newton").is_err());
    }

    #[test]
    fn config_bounds() {
        let mut c = OptimizerConfig::default();
        c.validate().unwrap();
        c.gamma = 1.0;
        assert!(c.validate().is_err());
        c = OptimizerConfig { max_step: 1.0, ..Default::default() };
        assert!(c.validate().is_err());
    }

    fn small_setup() -> (Arc<ReferenceMesh>, RadialFunction) {
        let reference = Arc::new(ReferenceMesh::with_boundary(32, 8).unwrap());
        let f = RadialFunction::square(reference.grid().clone(), PI.sqrt()).unwrap();
        (reference, f)
    }

    #[test]
    fn inflation_decreases_area_penalty() {
        // J(f) = (A(f) - 4π)² from a disk of radius 1: inflating by g ≡ 1
        // has J' = 2(A - 4π)·2π < 0 and J(1 + s) = ((1+s)²π - 4π)².
        let j = |r: f64| (PI * r * r - 4.0 * PI).powi(2);
        let predicted = 2.0 * (PI - 4.0 * PI) * 2.0 * PI;
        let gamma = 1e-3;
        let mut s = 0.5;
        while j(1.0 + s) - j(1.0) > gamma * s * predicted {
            s *= 0.5;
        }
        assert_eq!(s, 0.5);
        assert!(j(1.5) < j(1.0));
    }

    #[test]
    fn zero_direction_and_wrong_sign_are_rejected() {
        let (reference, f) = small_setup();
        let spec = EnergySpec::no_pde();
        let config = OptimizerConfig::default();
        let e0 = energy(&f, &spec, &reference).unwrap();
        let zero = P1Function::constant(f.grid().clone(), 0.0);
        assert!(matches!(
            armijo_step(&f, &zero, e0, 0.0, &spec, &reference, &config),
            Err(Error::Precondition(_))
        ));
        // a negative claim along g = 0 can never satisfy the Armijo inequality
        assert_eq!(
            armijo_step(&f, &zero, e0, -1.0, &spec, &reference, &config).unwrap_err(),
            Error::LineSearchFailed
        );
    }

    #[test]
    fn accepted_steps_are_logged_consistently() {
        let (reference, f) = small_setup();
        let spec = EnergySpec::laplace();
        for method in [Method::PLaplace(2.0), Method::Sinkhorn] {
            let config = OptimizerConfig { method, max_steps: 4, ..Default::default() };
            let log = run(&f, &spec, &reference, &config, 2).unwrap();
            assert_eq!(log.status, Status::MaxSteps);
            assert_eq!(log.records.len(), 4);
            for r in &log.records {
                assert!(r.satisfies_armijo(config.gamma), "{r:?}");
                assert!(r.energy_pre < r.energy);
                assert_relative_eq!(r.area, 4.0 * PI, max_relative = 1e-12);
            }
            assert!(log.f.min() > 0.0);
            assert_eq!(log.snapshots.iter().map(|s| s.0).collect::<Vec<_>>(), vec![0, 2, 4]);
        }
    }

    #[test]
    fn constant_target_stops_at_once() {
        let reference = Arc::new(ReferenceMesh::with_boundary(32, 8).unwrap());
        let f = RadialFunction::disk(reference.grid().clone(), 2.0).unwrap();
        let spec = EnergySpec::with_constant_target(EnergyKind::Linear, 1.0);
        let log = run(&f, &spec, &reference, &OptimizerConfig::default(), 0).unwrap();
        assert_eq!(log.status, Status::Stationary);
        assert!(log.records.is_empty());
    }
}
