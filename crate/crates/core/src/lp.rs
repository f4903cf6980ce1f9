//! Dense tableau simplex for small linear programs
//! `min cᵀx  s.t.  A x <= b, x >= 0` with `b >= 0`.
//!
//! The slack basis is feasible from the start, so no phase one is needed.
//! Bland's rule guards against cycling on the heavily degenerate
//! Lipschitz-constraint polytopes this is used for.

use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

const PIVOT_TOL: f64 = 1e-12;

/// `a` is row-major with `b.len()` rows and `c.len()` columns.
pub fn minimize(c: &[f64], a: &[f64], b: &[f64]) -> Result<LpSolution> {
    let n = c.len();
    let m = b.len();
    if a.len() != n * m {
        return Err(Error::ShapeMismatch {
            expected: (m, n),
            got: (a.len(), 1),
        });
    }
    if b.iter().any(|&bi| bi < 0.0) {
        return Err(Error::InvalidParameter(
            "right-hand side must be nonnegative".into(),
        ));
    }
    let width = n + m + 1;
    // rows 0..m constraints, row m objective (reduced costs)
    let mut t = vec![0.0; (m + 1) * width];
    for i in 0..m {
        t[i * width..i * width + n].copy_from_slice(&a[i * n..(i + 1) * n]);
        t[i * width + n + i] = 1.0;
        t[i * width + width - 1] = b[i];
    }
    t[m * width..m * width + n].copy_from_slice(c);
    let mut basis: Vec<usize> = (n..n + m).collect();

    let max_pivots = 50 * (n + m) * (n + m);
    let mut pivots = 0;
    loop {
        let obj = &t[m * width..(m + 1) * width];
        let Some(col) = (0..n + m).find(|&j| obj[j] < -PIVOT_TOL) else {
            break;
        };
        let mut row: Option<usize> = None;
        let mut best = f64::INFINITY;
        for i in 0..m {
            let aij = t[i * width + col];
            if aij > PIVOT_TOL {
                let ratio = t[i * width + width - 1] / aij;
                let better = match row {
                    None => true,
                    Some(r) => {
                        ratio < best - 1e-14 || (ratio <= best + 1e-14 && basis[i] < basis[r])
                    }
                };
                if better {
                    best = ratio;
                    row = Some(i);
                }
            }
        }
        let Some(row) = row else {
            return Err(Error::Infeasible("unbounded"));
        };
        pivot(&mut t, width, m, row, col);
        basis[row] = col;
        pivots += 1;
        if pivots > max_pivots {
            return Err(Error::NotConverged {
                solver: "simplex",
                iterations: pivots,
                residual: f64::NAN,
            });
        }
    }
    let mut x = vec![0.0; n];
    for (i, &bv) in basis.iter().enumerate() {
        if bv < n {
            x[bv] = t[i * width + width - 1];
        }
    }
    let objective = c.iter().zip(&x).map(|(ci, xi)| ci * xi).sum();
    Ok(LpSolution {
        x,
        objective,
        pivots,
    })
}

fn pivot(t: &mut [f64], width: usize, m: usize, row: usize, col: usize) {
    let p = t[row * width + col];
    for k in 0..width {
        t[row * width + k] /= p;
    }
    let pivot_row: Vec<f64> = t[row * width..(row + 1) * width].to_vec();
    for i in 0..=m {
        if i == row {
            continue;
        }
        let factor = t[i * width + col];
        if factor != 0.0 {
            for (k, pv) in pivot_row.iter().enumerate() {
                t[i * width + k] -= factor * pv;
            }
        }
    }
}
