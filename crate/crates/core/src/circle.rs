//! Periodic P1 finite elements on the unit circle with the arc-length metric.

use std::f64::consts::TAU;
use std::sync::Arc;

use crate::{Error, Result};

/// Smallest admissible nodal value of a radial function.
pub const POSITIVITY_THRESHOLD: f64 = 1e-10;

/// Reduce an angle to `[0, 2π)`.
pub fn reduce_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Intrinsic distance between two points of the circle.
pub fn geodesic_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).abs().rem_euclid(TAU);
    d.min(TAU - d)
}

/// A periodic mesh of the circle given by sorted node angles.
#[derive(Debug, Clone, PartialEq)]
pub struct CircleGrid {
    nodes: Vec<f64>,
    arcs: Vec<f64>,
}

impl CircleGrid {
    /// Build a grid from node angles. Angles are reduced to `[0, 2π)` and
    /// must then be strictly increasing.
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 3 {
            return Err(Error::InvalidGrid(format!(
                "need at least 3 nodes, got {}",
                nodes.len()
            )));
        }
        let nodes: Vec<f64> = nodes.into_iter().map(reduce_angle).collect();
        if let Some(i) = nodes.iter().position(|t| !t.is_finite()) {
            return Err(Error::InvalidGrid(format!("node {i} is not finite")));
        }
        let n = nodes.len();
        let mut arcs = Vec::with_capacity(n);
        for i in 0..n {
            let h = if i + 1 < n {
                nodes[i + 1] - nodes[i]
            } else {
                nodes[0] + TAU - nodes[n - 1]
            };
            if h <= 0.0 {
                return Err(Error::InvalidGrid(format!(
                    "nodes must be strictly increasing (arc {i} has length {h})"
                )));
            }
            arcs.push(h);
        }
        Ok(Self { nodes, arcs })
    }

    /// Equispaced grid with nodes `2πi/n`.
    pub fn uniform(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidGrid(format!("need at least 3 nodes, got {n}")));
        }
        let h = TAU / n as f64;
        Ok(Self {
            nodes: (0..n).map(|i| i as f64 * h).collect(),
            arcs: vec![h; n],
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// `arcs()[i]` is the length of the arc from node `i` to node `i + 1 (mod n)`.
    pub fn arcs(&self) -> &[f64] {
        &self.arcs
    }

    pub fn max_arc(&self) -> f64 {
        self.arcs.iter().cloned().fold(0.0, f64::max)
    }

    pub fn next(&self, i: usize) -> usize {
        (i + 1) % self.len()
    }

    /// Bracketing nodes `(i, i + 1)` of an angle and the barycentric weight
    /// `t` of the right node, so that a P1 function evaluates to
    /// `(1 - t) g_i + t g_{i+1}`.
    pub fn locate(&self, theta: f64) -> (usize, usize, f64) {
        let theta = reduce_angle(theta);
        let n = self.len();
        // number of nodes <= theta
        let k = self.nodes.partition_point(|&x| x <= theta);
        let i = if k == 0 { n - 1 } else { k - 1 };
        let offset = (theta - self.nodes[i]).rem_euclid(TAU);
        let t = (offset / self.arcs[i]).clamp(0.0, 1.0);
        (i, self.next(i), t)
    }

    /// Whether two grids describe the same nodes.
    pub fn same_as(&self, other: &CircleGrid) -> bool {
        std::ptr::eq(self, other) || self.nodes == other.nodes
    }
}

/// `CircleGrid::uniform` as a free function.
pub fn uniform_grid(n: usize) -> Result<Arc<CircleGrid>> {
    CircleGrid::uniform(n).map(Arc::new)
}

/// Continuous piecewise linear function on a [`CircleGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct P1Function {
    grid: Arc<CircleGrid>,
    values: Vec<f64>,
}

impl P1Function {
    pub fn new(grid: Arc<CircleGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch {
                expected: (grid.len(), 1),
                got: (values.len(), 1),
            });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Arc<CircleGrid>, c: f64) -> Self {
        let values = vec![c; grid.len()];
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<CircleGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn eval(&self, theta: f64) -> f64 {
        let (i, j, t) = self.grid.locate(theta);
        (1.0 - t) * self.values[i] + t * self.values[j]
    }

    /// Slope of the interpolant on arc `i`.
    pub fn slope(&self, i: usize) -> f64 {
        let j = self.grid.next(i);
        (self.values[j] - self.values[i]) / self.grid.arcs()[i]
    }

    /// Lipschitz seminorm under the intrinsic metric: the largest absolute slope.
    pub fn lipschitz_seminorm(&self) -> f64 {
        (0..self.values.len())
            .map(|i| self.slope(i).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Pointwise `a * self + b * other`.
    pub fn axpby(&self, a: f64, other: &P1Function, b: f64) -> Result<P1Function> {
        if !self.grid.same_as(&other.grid) {
            return Err(Error::GridMismatch);
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(P1Function {
            grid: self.grid.clone(),
            values,
        })
    }

    pub fn scaled(&self, c: f64) -> P1Function {
        self.map(|v| c * v)
    }

    pub fn shifted(&self, c: f64) -> P1Function {
        self.map(|v| v + c)
    }

    fn map(&self, op: impl Fn(f64) -> f64) -> P1Function {
        P1Function {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| op(v)).collect(),
        }
    }
}

pub fn lipschitz_seminorm(g: &P1Function) -> f64 {
    g.lipschitz_seminorm()
}

/// Nodal (Lagrange) interpolation.
pub fn interpolate(phi: impl Fn(f64) -> f64, grid: &Arc<CircleGrid>) -> Result<P1Function> {
    let values = grid.nodes().iter().map(|&t| phi(t)).collect();
    P1Function::new(grid.clone(), values)
}

/// A strictly positive P1 function describing the star-shaped domain
/// `{ r ω : 0 <= r < f(ω) }`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialFunction(P1Function);

impl RadialFunction {
    pub fn new(f: P1Function) -> Result<Self> {
        if let Some((index, &value)) = f
            .values()
            .iter()
            .enumerate()
            .find(|(_, &v)| v < POSITIVITY_THRESHOLD)
        {
            return Err(Error::NonPositive { index, value });
        }
        Ok(Self(f))
    }

    pub fn from_values(grid: Arc<CircleGrid>, values: Vec<f64>) -> Result<Self> {
        Self::new(P1Function::new(grid, values)?)
    }

    /// Disk of radius `r`.
    pub fn disk(grid: Arc<CircleGrid>, r: f64) -> Result<Self> {
        Self::new(P1Function::constant(grid, r))
    }

    /// Interpolated radial function of the axis-aligned square `(-a, a)^2`.
    pub fn square(grid: Arc<CircleGrid>, half_side: f64) -> Result<Self> {
        Self::new(interpolate(|t| square_radius(half_side, t), &grid)?)
    }

    pub fn function(&self) -> &P1Function {
        &self.0
    }

    pub fn grid(&self) -> &Arc<CircleGrid> {
        self.0.grid()
    }

    pub fn values(&self) -> &[f64] {
        self.0.values()
    }

    pub fn eval(&self, theta: f64) -> f64 {
        self.0.eval(theta)
    }

    pub fn min(&self) -> f64 {
        self.values().iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn mean(&self) -> f64 {
        self.values().iter().sum::<f64>() / self.values().len() as f64
    }

    /// `c * f` for `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.0.scaled(c))
    }
}

/// Exact radial function of the square `(-a, a)^2`.
pub fn square_radius(half_side: f64, theta: f64) -> f64 {
    half_side / theta.cos().abs().max(theta.sin().abs())
}

/// Constraint vector `w_i = ∫ f φ_i` integrated exactly on each arc.
/// For every P1 function `g` on the same grid, `⟨w, g⟩ = ∫ f g`.
pub fn weighted_mass_vector(f: &RadialFunction) -> Vec<f64> {
    let grid = f.grid();
    let v = f.values();
    let n = grid.len();
    let mut w = vec![0.0; n];
    for (i, &h) in grid.arcs().iter().enumerate() {
        let j = grid.next(i);
        w[i] += h * (2.0 * v[i] + v[j]) / 6.0;
        w[j] += h * (v[i] + 2.0 * v[j]) / 6.0;
    }
    w
}

/// Area `½ ∫ f² dθ` of the star-shaped domain, exact for P1 `f`.
pub fn star_area(f: &RadialFunction) -> f64 {
    let grid = f.grid();
    let v = f.values();
    grid.arcs()
        .iter()
        .enumerate()
        .map(|(i, &h)| {
            let (a, b) = (v[i], v[grid.next(i)]);
            h * (a * a + a * b + b * b) / 6.0
        })
        .sum()
}

/// `∫ g dθ` for a P1 function.
pub fn integral(g: &P1Function) -> f64 {
    let grid = g.grid();
    let v = g.values();
    grid.arcs()
        .iter()
        .enumerate()
        .map(|(i, &h)| 0.5 * h * (v[i] + v[grid.next(i)]))
        .sum()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Half-open angular interval `[start, start + length)` intersected with an
/// arc `[a, a + h)`; returns the overlap as offsets from `a`.
pub(crate) fn arc_overlap(a: f64, h: f64, start: f64, length: f64) -> Option<(f64, f64)> {
    // unwrap the interval start so that it lies within one turn below a + h
    let mut s = start + ((a - start) / TAU).floor() * TAU;
    let mut best: Option<(f64, f64)> = None;
    for _ in 0..3 {
        let lo = s.max(a);
        let hi = (s + length).min(a + h);
        if hi > lo {
            let piece = (lo - a, hi - a);
            best = Some(match best {
                // an interval can touch an arc twice only if it wraps almost fully
                Some((l0, h0)) => (l0.min(piece.0), h0.max(piece.1)),
                None => piece,
            });
        }
        s += TAU;
    }
    best
}
