//! Jacobi-preconditioned conjugate gradients on CSR matrices.

use nalgebra_sparse::CsrMatrix;
use rayon::prelude::*;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    /// `‖b - Ax‖₂ / ‖b‖₂`, recomputed from scratch at exit.
    pub relative_residual: f64,
}

pub fn matvec(a: &CsrMatrix<f64>, x: &[f64], out: &mut [f64]) {
    let offsets = a.row_offsets();
    let cols = a.col_indices();
    let vals = a.values();
    out.par_iter_mut().enumerate().for_each(|(i, o)| {
        let mut s = 0.0;
        for k in offsets[i]..offsets[i + 1] {
            s += vals[k] * x[cols[k]];
        }
        *o = s;
    });
}

fn diagonal(a: &CsrMatrix<f64>) -> Vec<f64> {
    (0..a.nrows())
        .map(|i| {
            let row = a.row(i);
            row.col_indices()
                .iter()
                .zip(row.values())
                .find(|(&c, _)| c == i)
                .map(|(_, &v)| v)
                .unwrap_or(0.0)
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solve the SPD system `A x = b` from `x = 0`.
pub fn pcg(a: &CsrMatrix<f64>, b: &[f64], rel_tol: f64, max_iter: usize) -> Result<(Vec<f64>, CgReport)> {
    let n = b.len();
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::ShapeMismatch {
            expected: (n, n),
            got: (a.nrows(), a.ncols()),
        });
    }
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return Ok((
            vec![0.0; n],
            CgReport {
                iterations: 0,
                relative_residual: 0.0,
            },
        ));
    }
    let inv_diag: Vec<f64> = diagonal(a)
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut x = vec![0.0; n];
    let mut ap = vec![0.0; n];
    let mut iterations = 0;
    let mut true_res = 1.0;
    // restart from the true residual whenever the recursive one has drifted
    for _ in 0..5 {
        matvec(a, &x, &mut ap);
        let mut r: Vec<f64> = b.iter().zip(&ap).map(|(b, ax)| b - ax).collect();
        let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let target = 0.5 * rel_tol * bnorm;
        while iterations < max_iter {
            if dot(&r, &r).sqrt() <= target {
                break;
            }
            matvec(a, &p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(Error::Precondition("matrix is not positive definite".into()));
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            for i in 0..n {
                z[i] = r[i] * inv_diag[i];
            }
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
            iterations += 1;
        }
        matvec(a, &x, &mut ap);
        true_res = b
            .iter()
            .zip(&ap)
            .map(|(b, ax)| (b - ax) * (b - ax))
            .sum::<f64>()
            .sqrt()
            / bnorm;
        if true_res <= rel_tol || iterations >= max_iter {
            break;
        }
    }
    if true_res > rel_tol {
        return Err(Error::NotConverged {
            solver: "conjugate gradients",
            iterations,
            residual: true_res,
        });
    }
    Ok((
        x,
        CgReport {
            iterations,
            relative_residual: true_res,
        },
    ))
}
