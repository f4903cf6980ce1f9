//! Steepest descent in the Lipschitz topology for star-shaped shape optimisation.
//!
//! A star-shaped domain in the plane is encoded by a positive radial function
//! `f` on the unit circle. Shape derivatives become signed measures on the
//! circle, and the steepest descent direction among 1-Lipschitz radial
//! perturbations is (minus) a Kantorovich potential for the balanced positive
//! and negative parts of that measure. The potential is computed with a
//! log-domain Sinkhorn solver.
//!
//! The crate is organised bottom-up:
//!
//! * [`circle`]: periodic P1 elements on the circle, radial functions.
//! * [`measure`]: nodal functionals, atomic measures, balancing by the
//!   volume multiplier.
//! * [`transport`]: entropic optimal transport and the Lipschitz-1 descent
//!   direction.
//! * [`relax`]: p-Laplacian and viscosity relaxations, plus an exact LP
//!   oracle for small grids.
//! * [`fem2d`]: meshes of star-shaped domains and P1 Poisson solves.
//! * [`shapederiv`]: energies and discrete shape derivatives.
//! * [`optimize`]: Armijo descent with volume projection.
//! * [`experiments`]: the convergence tables and optimisation runs.

pub mod circle;
pub mod experiments;
pub mod export;
pub mod fem2d;
pub mod lp;
pub mod measure;
pub mod optimize;
pub mod oracle;
pub mod relax;
pub mod shapederiv;
pub mod sparse;
pub mod transport;

use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite value {value} at node {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("radial function must be positive, found {value} at node {index}")]
    NonPositive { index: usize, value: f64 },

    #[error("functions live on incompatible grids")]
    GridMismatch,

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("degenerate domain: total constraint weight is {0}")]
    DegenerateDomain(f64),

    #[error("balanced measure vanishes; the shape is stationary")]
    Stationary,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("mapped mesh has a non-positive triangle ({index}, area {area:e})")]
    DegenerateMesh { index: usize, area: f64 },

    #[error("problem too large for the exact oracle: n = {n}, limit {limit}")]
    TooLarge { n: usize, limit: usize },

    #[error("linear program is {0}")]
    Infeasible(&'static str),

    #[error("line search found no admissible step")]
    LineSearchFailed,

    #[error("precondition violated: {0}")]
    Precondition(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub use circle::{CircleGrid, P1Function, RadialFunction};
pub use measure::{AtomicMeasure, BalancedMeasurePair, NodalFunctional, SignedMeasure};
