//! Exact transport costs for small problems, used to cross-check Sinkhorn.

use std::f64::consts::TAU;

use crate::circle::{geodesic_distance, reduce_angle};
use crate::measure::AtomicMeasure;
use crate::{Error, Result};

/// Optimal transport cost between `μ/|μ|` and `ν/|ν|` under the geodesic
/// metric. On the circle this is `min_c Σ_k ℓ_k |F_k - c|`, where the `ℓ_k`
/// are the arcs between consecutive atoms and `F_k` is the cumulative
/// signed mass up to arc `k`; the minimum sits at a weighted median of `F`.
pub fn exact_transport_cost(mu: &AtomicMeasure, nu: &AtomicMeasure) -> Result<f64> {
    let (n1, n2) = (mu.len(), nu.len());
    if n1 == 0 || n2 == 0 {
        return Err(Error::Stationary);
    }
    let (ma, mb) = (mu.mass(), nu.mass());
    let mut pts: Vec<(f64, f64)> = mu
        .atoms()
        .iter()
        .map(|&(t, w)| (reduce_angle(t), w / ma))
        .chain(nu.atoms().iter().map(|&(t, w)| (reduce_angle(t), -w / mb)))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let k = pts.len();
    let mut arcs = Vec::with_capacity(k);
    let mut cum = 0.0;
    for i in 0..k {
        cum += pts[i].1;
        let next = if i + 1 < k { pts[i + 1].0 } else { pts[0].0 + TAU };
        arcs.push((cum, next - pts[i].0));
    }
    let total: f64 = arcs.iter().map(|a| a.1).sum();
    let mut sorted = arcs.clone();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut acc = 0.0;
    let mut median = sorted[0].0;
    for &(f, l) in &sorted {
        acc += l;
        median = f;
        if acc >= 0.5 * total {
            break;
        }
    }
    Ok(arcs.iter().map(|&(f, l)| l * (f - median).abs()).sum())
}

/// Transport cost between equal-size unit-mass point sets by enumerating
/// all assignments. Only for `n <= 8`.
pub fn assignment_cost_by_enumeration(sources: &[f64], targets: &[f64]) -> Result<f64> {
    let n = sources.len();
    if n != targets.len() {
        return Err(Error::ShapeMismatch {
            expected: (n, n),
            got: (n, targets.len()),
        });
    }
    if n > 8 {
        return Err(Error::TooLarge { n, limit: 8 });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, &mut |p| {
        let c: f64 = p
            .iter()
            .enumerate()
            .map(|(i, &j)| geodesic_distance(sources[i], targets[j]))
            .sum();
        best = best.min(c);
    });
    Ok(best)
}

fn permute(p: &mut [usize], k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == p.len() {
        visit(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, visit);
        p.swap(k, i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn two_point_transport() {
        let mu = AtomicMeasure::new(vec![(0.0, 2.0)]).unwrap();
        let nu = AtomicMeasure::new(vec![(PI / 2.0, 1.0), (PI, 1.0)]).unwrap();
        let c = exact_transport_cost(&mu, &nu).unwrap();
        assert_abs_diff_eq!(c, 0.5 * (PI / 2.0) + 0.5 * PI, epsilon = 1e-14);
    }

    #[test]
    fn flow_agrees_with_enumeration() {
        let s = [0.05, 1.05, 2.05, 3.05];
        let t: Vec<f64> = s.iter().map(|x| x + PI).collect();
        let enumerated = assignment_cost_by_enumeration(&s, &t).unwrap();
        let mu = AtomicMeasure::new(s.iter().map(|&x| (x, 1.0)).collect()).unwrap();
        let nu = AtomicMeasure::new(t.iter().map(|&x| (x, 1.0)).collect()).unwrap();
        let flow = 4.0 * exact_transport_cost(&mu, &nu).unwrap();
        assert_abs_diff_eq!(flow, enumerated, epsilon = 1e-12);
        assert_abs_diff_eq!(enumerated, 4.0 * PI - 8.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn median_formula_matches_assignments(
            s in proptest::collection::vec(0.0..TAU, 1..6),
            shift in proptest::collection::vec(-7.0..7.0f64, 6),
        ) {
            let t: Vec<f64> = s.iter().zip(&shift).map(|(x, d)| x + d).collect();
            let enumerated = assignment_cost_by_enumeration(&s, &t).unwrap();
            let mu = AtomicMeasure::new(s.iter().map(|&x| (x, 1.0)).collect()).unwrap();
            let nu = AtomicMeasure::new(t.iter().map(|&x| (x, 1.0)).collect()).unwrap();
            let flow = s.len() as f64 * exact_transport_cost(&mu, &nu).unwrap();
            prop_assert!((flow - enumerated).abs() <= 1e-10);
        }
    }
}
