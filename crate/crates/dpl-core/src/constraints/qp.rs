//! Primal active-set solver for Euclidean projection onto `{p : Ap ≤ b}`.
//!
//! The Hessian is the identity, so the equality-constrained subproblem
//! reduces to projecting `x − p` onto the null space of the working rows.
//! Constraints enter by smallest blocking ratio and leave by smallest index
//! among negative multipliers, which keeps the iteration deterministic.

use crate::{Matrix, Vector};

const STEP_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct QpFailure;

/// Projects `x` onto `{p : Ap ≤ b}`; `b ≥ 0` guarantees the origin is a
/// feasible start.
pub fn project_onto_polyhedron(
    a: &Matrix,
    b: &Vector,
    x: &Vector,
    tol: f64,
    max_iter: usize,
) -> Result<Vector, QpFailure> {
    let m = a.nrows();
    let n = a.ncols();

    let feasible = (a * x - b).iter().all(|v| *v <= tol);
    let mut p = if feasible {
        x.clone()
    } else {
        Vector::zeros(n)
    };
    let mut working: Vec<usize> = Vec::new();

    for _ in 0..max_iter {
        let residual = x - &p;
        let (d, mu) = step_direction(a, &working, &residual);

        if d.norm() <= STEP_TOL.max(tol * residual.norm().max(1.0)) {
            match mu
                .iter()
                .enumerate()
                .filter(|(_, v)| **v < -tol)
                .map(|(i, _)| i)
                .next()
            {
                None => return Ok(p),
                Some(drop) => {
                    working.remove(drop);
                }
            }
            continue;
        }

        // largest step along d that stays feasible
        let mut alpha = 1.0_f64;
        let mut blocker = None;
        for i in 0..m {
            if working.contains(&i) {
                continue;
            }
            let advance = a.row(i).transpose().dot(&d);
            if advance > STEP_TOL {
                let slack = b[i] - a.row(i).transpose().dot(&p);
                let ratio = (slack / advance).max(0.0);
                if ratio < alpha - STEP_TOL {
                    alpha = ratio;
                    blocker = Some(i);
                }
            }
        }
        p += alpha * &d;
        if let Some(i) = blocker {
            working.push(i);
            working.sort_unstable();
        }
    }
    Err(QpFailure)
}

/// Projection of `residual` onto the null space of the working rows, plus
/// the least-squares multipliers of those rows.
fn step_direction(a: &Matrix, working: &[usize], residual: &Vector) -> (Vector, Vec<f64>) {
    if working.is_empty() {
        return (residual.clone(), Vec::new());
    }
    let k = working.len();
    let n = a.ncols();
    let mut aw = Matrix::zeros(k, n);
    for (row, &i) in working.iter().enumerate() {
        aw.row_mut(row).copy_from(&a.row(i));
    }
    let gram = &aw * aw.transpose();
    let rhs = &aw * residual;
    let mu = gram
        .svd(true, true)
        .solve(&rhs, 1e-13)
        .unwrap_or_else(|_| Vector::zeros(k));
    let d = residual - aw.transpose() * &mu;
    (d, mu.iter().copied().collect())
}
