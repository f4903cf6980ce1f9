//! Shape derivatives as atomic signed measures on the circle.
//!
//! A discrete shape derivative is stored against P1 test functions: the
//! coefficient `a_i` is its value on the hat function of node `i`, so the
//! functional is the atomic measure `Σ a_i δ_{θ_i}`. Balancing with the
//! volume multiplier and splitting into positive and negative parts yields
//! the two marginals of a transport problem.

use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use crate::circle::{arc_overlap, dot, CircleGrid, P1Function};
use crate::{Error, Result};

/// Anything that acts linearly on P1 functions.
pub trait Functional {
    fn apply(&self, g: &P1Function) -> Result<f64>;
}

/// Functional `g ↦ Σ a_i g(θ_i)` on a fixed grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalFunctional {
    grid: Arc<CircleGrid>,
    coeffs: Vec<f64>,
}

impl NodalFunctional {
    pub fn new(grid: Arc<CircleGrid>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(Error::ShapeMismatch {
                expected: (grid.len(), 1),
                got: (coeffs.len(), 1),
            });
        }
        if let Some((index, &value)) = coeffs.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Self { grid, coeffs })
    }

    pub fn zero(grid: Arc<CircleGrid>) -> Self {
        let coeffs = vec![0.0; grid.len()];
        Self { grid, coeffs }
    }

    pub fn grid(&self) -> &Arc<CircleGrid> {
        &self.grid
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn total(&self) -> f64 {
        self.coeffs.iter().sum()
    }

    pub fn l1_norm(&self) -> f64 {
        self.coeffs.iter().map(|a| a.abs()).sum()
    }

    /// Restriction of a signed atomic measure to P1 test functions: every
    /// atom is shared between its two bracketing nodes with the linear
    /// interpolation weights, so `apply` agrees with the measure on P1 `g`.
    pub fn from_signed_atoms(grid: Arc<CircleGrid>, measure: &SignedMeasure) -> Self {
        let mut coeffs = vec![0.0; grid.len()];
        for &(theta, weight) in measure.atoms() {
            let (i, j, t) = grid.locate(theta);
            coeffs[i] += (1.0 - t) * weight;
            coeffs[j] += t * weight;
        }
        Self { grid, coeffs }
    }

    /// `a_i = ∫ ρ φ_i` for a piecewise constant density given as
    /// `(start, length, value)` pieces, integrated exactly.
    pub fn from_piecewise_constant(grid: Arc<CircleGrid>, pieces: &[(f64, f64, f64)]) -> Self {
        let mut coeffs = vec![0.0; grid.len()];
        for (i, (&a, &h)) in grid.nodes().iter().zip(grid.arcs()).enumerate() {
            let j = grid.next(i);
            for &(start, length, value) in pieces {
                if let Some((lo, hi)) = arc_overlap(a, h, start, length) {
                    // ∫ x/h dx over [lo, hi] is the right hat's share
                    let right = (hi * hi - lo * lo) / (2.0 * h);
                    coeffs[i] += value * ((hi - lo) - right);
                    coeffs[j] += value * right;
                }
            }
        }
        Self { grid, coeffs }
    }

    fn check_grid(&self, g: &P1Function) -> Result<()> {
        if self.grid.same_as(g.grid()) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

impl Functional for NodalFunctional {
    fn apply(&self, g: &P1Function) -> Result<f64> {
        self.check_grid(g)?;
        Ok(dot(&self.coeffs, g.values()))
    }
}

/// The step density `±0.1` on the upper and lower half circle.
pub fn chi_functional(grid: Arc<CircleGrid>) -> NodalFunctional {
    NodalFunctional::from_piecewise_constant(grid, &[(0.0, PI, 0.1), (PI, PI, -0.1)])
}

/// Positive atomic measure on the circle; atoms may sit anywhere.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AtomicMeasure {
    atoms: Vec<(f64, f64)>,
}

impl AtomicMeasure {
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        for (index, &(theta, w)) in atoms.iter().enumerate() {
            if !theta.is_finite() {
                return Err(Error::NonFinite { index, value: theta });
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "atom {index} has non-positive weight {w}"
                )));
            }
        }
        Ok(Self { atoms })
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn angles(&self) -> impl Iterator<Item = f64> + '_ {
        self.atoms.iter().map(|a| a.0)
    }

    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.atoms.iter().map(|a| a.1)
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn mass(&self) -> f64 {
        self.weights().sum()
    }
}

impl Functional for AtomicMeasure {
    fn apply(&self, g: &P1Function) -> Result<f64> {
        Ok(self.atoms.iter().map(|&(t, w)| w * g.eval(t)).sum())
    }
}

/// Signed atomic measure.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SignedMeasure {
    atoms: Vec<(f64, f64)>,
}

impl SignedMeasure {
    pub fn new(atoms: Vec<(f64, f64)>) -> Self {
        Self { atoms }
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn positive_part(&self) -> AtomicMeasure {
        AtomicMeasure {
            atoms: self.atoms.iter().filter(|a| a.1 > 0.0).cloned().collect(),
        }
    }

    pub fn negative_part(&self) -> AtomicMeasure {
        AtomicMeasure {
            atoms: self
                .atoms
                .iter()
                .filter(|a| a.1 < 0.0)
                .map(|&(t, w)| (t, -w))
                .collect(),
        }
    }

    pub fn total_variation(&self) -> f64 {
        self.atoms.iter().map(|a| a.1.abs()).sum()
    }
}

impl Functional for SignedMeasure {
    fn apply(&self, g: &P1Function) -> Result<f64> {
        Ok(self.atoms.iter().map(|&(t, w)| w * g.eval(t)).sum())
    }
}

/// Four unit atoms near `0.05 + i` against four at `π + 0.05 + i`.
pub fn manufactured_atoms() -> SignedMeasure {
    let mut atoms = Vec::with_capacity(8);
    for i in 0..4 {
        atoms.push((0.05 + i as f64, 1.0));
    }
    for i in 0..4 {
        atoms.push(((PI + 0.05 + i as f64).rem_euclid(TAU), -1.0));
    }
    SignedMeasure::new(atoms)
}

/// Volume multiplier `λ* = ⟨F, 1⟩ / Σ w_i`.
pub fn lambda_star(functional: &NodalFunctional, w: &[f64]) -> Result<f64> {
    if w.len() != functional.coeffs.len() {
        return Err(Error::ShapeMismatch {
            expected: (functional.coeffs.len(), 1),
            got: (w.len(), 1),
        });
    }
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateDomain(total));
    }
    Ok(functional.total() / total)
}

/// Positive and negative parts of the balanced functional `a - λ* w`.
#[derive(Debug, Clone)]
pub struct BalancedMeasurePair {
    pub mu: AtomicMeasure,
    pub nu: AtomicMeasure,
    /// Grid node carrying each atom of `mu`.
    pub mu_nodes: Vec<usize>,
    /// Grid node carrying each atom of `nu`.
    pub nu_nodes: Vec<usize>,
    pub beta: f64,
    pub lambda_star: f64,
    /// The balanced coefficients `m = a - λ* w`, summing to zero.
    pub balanced: NodalFunctional,
    pub stationary: bool,
}

impl BalancedMeasurePair {
    pub fn grid(&self) -> &Arc<CircleGrid> {
        self.balanced.grid()
    }
}

/// Relative threshold on `β / ‖a‖₁` below which a functional is stationary.
pub const STATIONARY_TOL: f64 = 1e-12;

pub fn balance_and_split(functional: &NodalFunctional, w: &[f64]) -> Result<BalancedMeasurePair> {
    let lambda = lambda_star(functional, w)?;
    let n = w.len();
    let mut m: Vec<f64> = functional
        .coeffs
        .iter()
        .zip(w)
        .map(|(a, wi)| a - lambda * wi)
        .collect();
    let residual: f64 = m.iter().sum::<f64>() / n as f64;
    m.iter_mut().for_each(|x| *x -= residual);

    let mut mu = Vec::new();
    let mut nu = Vec::new();
    let mut mu_nodes = Vec::new();
    let mut nu_nodes = Vec::new();
    let nodes = functional.grid.nodes();
    for (i, &mi) in m.iter().enumerate() {
        if mi > 0.0 {
            mu.push((nodes[i], mi));
            mu_nodes.push(i);
        } else if mi < 0.0 {
            nu.push((nodes[i], -mi));
            nu_nodes.push(i);
        }
    }
    let beta: f64 = mu.iter().map(|a| a.1).sum();
    let scale = functional.l1_norm();
    let stationary = beta == 0.0 || beta <= STATIONARY_TOL * scale;
    let balanced = NodalFunctional {
        grid: functional.grid.clone(),
        coeffs: m,
    };
    if stationary {
        return Ok(BalancedMeasurePair {
            mu: AtomicMeasure::default(),
            nu: AtomicMeasure::default(),
            mu_nodes: Vec::new(),
            nu_nodes: Vec::new(),
            beta: 0.0,
            lambda_star: lambda,
            balanced,
            stationary: true,
        });
    }
    Ok(BalancedMeasurePair {
        mu: AtomicMeasure { atoms: mu },
        nu: AtomicMeasure { atoms: nu },
        mu_nodes,
        nu_nodes,
        beta,
        lambda_star: lambda,
        balanced,
        stationary: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circle::{integral, interpolate, uniform_grid, weighted_mass_vector, RadialFunction};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn manufactured_atoms_kill_constants() {
        let grid = uniform_grid(16).unwrap();
        let m = manufactured_atoms();
        let c = P1Function::constant(grid.clone(), 2.7);
        assert_abs_diff_eq!(m.apply(&c).unwrap(), 0.0, epsilon = 1e-14);
        let nodal = NodalFunctional::from_signed_atoms(grid, &m);
        assert_abs_diff_eq!(nodal.apply(&c).unwrap(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn off_grid_atom_on_hat() {
        let grid = uniform_grid(4).unwrap();
        let mut hat = vec![0.0; 4];
        hat[1] = 1.0;
        let hat = P1Function::new(grid.clone(), hat).unwrap();
        let atom = AtomicMeasure::new(vec![(PI / 4.0, 1.0)]).unwrap();
        assert_abs_diff_eq!(atom.apply(&hat).unwrap(), 0.5, epsilon = 1e-15);

        let mut a = vec![0.0; 4];
        a[0] = 1.0;
        let f = NodalFunctional::new(grid.clone(), a).unwrap();
        let g = P1Function::new(grid, vec![3.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(f.apply(&g).unwrap(), 3.0);
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let f = NodalFunctional::zero(uniform_grid(4).unwrap());
        let g = P1Function::constant(uniform_grid(5).unwrap(), 1.0);
        assert_eq!(f.apply(&g), Err(Error::GridMismatch));
    }

    #[test]
    fn lambda_star_examples() {
        let grid = uniform_grid(10).unwrap();
        let w = weighted_mass_vector(&RadialFunction::disk(grid.clone(), 1.0).unwrap());
        let f = NodalFunctional::new(grid.clone(), vec![0.1; 10]).unwrap();
        assert_abs_diff_eq!(lambda_star(&f, &w).unwrap(), 1.0 / TAU, epsilon = 1e-15);
        let mut a = vec![0.0; 10];
        a[2] = 1.0;
        a[7] = -1.0;
        let f = NodalFunctional::new(grid, a).unwrap();
        assert_eq!(lambda_star(&f, &w).unwrap(), 0.0);
        assert!(matches!(
            lambda_star(&f, &[0.0; 10]),
            Err(Error::DegenerateDomain(_))
        ));
    }

    #[test]
    fn aligned_functional_is_stationary() {
        let grid = uniform_grid(12).unwrap();
        let f = RadialFunction::from_values(
            grid.clone(),
            (0..12).map(|i| 1.0 + 0.1 * i as f64).collect(),
        )
        .unwrap();
        let w = weighted_mass_vector(&f);
        let pair = balance_and_split(&NodalFunctional::new(grid.clone(), w.clone()).unwrap(), &w)
            .unwrap();
        assert!(pair.stationary);
        assert_eq!(pair.beta, 0.0);
        assert!(pair.mu.is_empty() && pair.nu.is_empty());

        let disk = RadialFunction::disk(grid.clone(), 2.0).unwrap();
        let w = weighted_mass_vector(&disk);
        let pair = balance_and_split(&NodalFunctional::new(grid, vec![-0.37; 12]).unwrap(), &w)
            .unwrap();
        assert!(pair.stationary);
    }

    #[test]
    fn manufactured_pair_has_mass_four() {
        // the atoms are on the nodes of this grid, so no mass cancels
        let m = manufactured_atoms();
        let mut nodes: Vec<f64> = m.atoms().iter().map(|a| a.0).collect();
        nodes.sort_by(f64::total_cmp);
        let grid = Arc::new(CircleGrid::new(nodes).unwrap());
        let nodal = NodalFunctional::from_signed_atoms(grid.clone(), &m);
        let w = vec![0.3, 1.0, 0.2, 0.7, 0.4, 0.9, 0.1, 0.6];
        let pair = balance_and_split(&nodal, &w).unwrap();
        assert_eq!(pair.lambda_star, 0.0);
        assert_abs_diff_eq!(pair.beta, 4.0, epsilon = 1e-14);
        assert_eq!(pair.mu.len(), 4);
        assert_eq!(pair.nu.len(), 4);
    }

    #[test]
    fn chi_coefficients_integrate_density() {
        for n in [7, 16, 33] {
            let grid = uniform_grid(n).unwrap();
            let chi = chi_functional(grid.clone());
            // against g = 1 the step density integrates to zero
            assert_abs_diff_eq!(chi.total(), 0.0, epsilon = 1e-14);
            // against g(θ) = θ-interpolant of sin: compare with fine quadrature
            let g = interpolate(f64::sin, &grid).unwrap();
            let exact: f64 = (0..200_000)
                .map(|k| {
                    let t = (k as f64 + 0.5) * TAU / 200_000.0;
                    let c = if t < PI { 0.1 } else { -0.1 };
                    c * g.eval(t) * TAU / 200_000.0
                })
                .sum();
            assert_abs_diff_eq!(chi.apply(&g).unwrap(), exact, epsilon = 1e-9);
        }
        let grid = uniform_grid(16).unwrap();
        let one = P1Function::constant(grid.clone(), 1.0);
        let c = NodalFunctional::from_piecewise_constant(grid, &[(0.3, 2.0, 1.5)]);
        assert_abs_diff_eq!(c.apply(&one).unwrap(), 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(integral(&one), TAU, epsilon = 1e-14);
    }

    proptest! {
        #[test]
        fn balanced_split_properties(
            a in prop::collection::vec(-1.0..1.0f64, 3..60),
            fv in prop::collection::vec(0.5..2.0f64, 60),
        ) {
            let n = a.len();
            let grid = uniform_grid(n).unwrap();
            let f = RadialFunction::from_values(grid.clone(), fv[..n].to_vec()).unwrap();
            let w = weighted_mass_vector(&f);
            let pair = balance_and_split(&NodalFunctional::new(grid.clone(), a).unwrap(), &w).unwrap();
            let one = P1Function::constant(grid, 1.0);
            prop_assert!(pair.balanced.apply(&one).unwrap().abs() <= 1e-12);
            if !pair.stationary {
                let dm = pair.mu.mass() - pair.nu.mass();
                prop_assert!(dm.abs() <= 1e-12 * pair.mu.mass().max(1.0));
                prop_assert_eq!(pair.beta, pair.mu.mass());
                prop_assert!(pair.mu.weights().all(|x| x > 0.0));
                prop_assert!(pair.nu.weights().all(|x| x > 0.0));
                prop_assert!(pair.mu_nodes.iter().all(|i| !pair.nu_nodes.contains(i)));
            }
        }

        #[test]
        fn apply_is_linear(
            a in prop::collection::vec(-1.0..1.0f64, 12),
            g in prop::collection::vec(-1.0..1.0f64, 12),
            h in prop::collection::vec(-1.0..1.0f64, 12),
            alpha in -3.0..3.0f64,
        ) {
            let grid = uniform_grid(12).unwrap();
            let f = NodalFunctional::new(grid.clone(), a).unwrap();
            let g = P1Function::new(grid.clone(), g).unwrap();
            let h = P1Function::new(grid, h).unwrap();
            let lhs = f.apply(&g.axpby(alpha, &h, 1.0).unwrap()).unwrap();
            let rhs = alpha * f.apply(&g).unwrap() + f.apply(&h).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn nodal_restriction_matches_atoms(
            atoms in prop::collection::vec((0.0..TAU, -2.0..2.0f64), 1..10),
            g in prop::collection::vec(-1.0..1.0f64, 9),
        ) {
            let grid = uniform_grid(9).unwrap();
            let m = SignedMeasure::new(atoms);
            let nodal = NodalFunctional::from_signed_atoms(grid.clone(), &m);
            let g = P1Function::new(grid, g).unwrap();
            prop_assert!((nodal.apply(&g).unwrap() - m.apply(&g).unwrap()).abs() < 1e-12);
        }
    }
}
