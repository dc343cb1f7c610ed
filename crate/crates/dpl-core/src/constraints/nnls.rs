//! Lawson–Hanson nonnegative least squares, used to project onto finitely
//! generated cones `{ Σ λ_j g_j : λ ≥ 0 }`.

use crate::{Matrix, Vector};

const MAX_OUTER: usize = 400;

/// Returns the Euclidean projection of `x` onto the cone generated by
/// `generators` (the empty set projects everything to the origin).
pub fn project_onto_generated_cone(generators: &[Vector], x: &Vector) -> Vector {
    let n = x.len();
    if generators.is_empty() {
        return Vector::zeros(n);
    }
    let k = generators.len();
    let mut v = Matrix::zeros(n, k);
    for (j, g) in generators.iter().enumerate() {
        v.column_mut(j).copy_from(g);
    }
    let lambda = nnls(&v, x);
    &v * lambda
}

/// Solves `min ‖V λ − x‖` subject to `λ ≥ 0`.
fn nnls(v: &Matrix, x: &Vector) -> Vector {
    let k = v.ncols();
    let tol = 1e-12 * (v.transpose() * x).amax().max(1.0);
    let mut lambda = Vector::zeros(k);
    let mut passive = vec![false; k];

    for _ in 0..MAX_OUTER {
        let w = v.transpose() * (x - v * &lambda);
        // steepest gradient enters; ties go to the smallest index
        let mut enter = None;
        let mut best = tol;
        for j in 0..k {
            if !passive[j] && w[j] > best {
                best = w[j];
                enter = Some(j);
            }
        }
        let Some(enter) = enter else {
            return lambda;
        };
        passive[enter] = true;

        // inner loop: keep the passive coefficients strictly positive
        loop {
            let z = passive_least_squares(v, x, &passive);
            let mut alpha = 1.0_f64;
            let mut any_nonpositive = false;
            for j in 0..k {
                if passive[j] && z[j] <= tol {
                    any_nonpositive = true;
                    let denom = lambda[j] - z[j];
                    if denom > 0.0 {
                        alpha = alpha.min(lambda[j] / denom);
                    }
                }
            }
            if !any_nonpositive {
                lambda = z;
                break;
            }
            lambda = &lambda + alpha * (z - &lambda);
            for j in 0..k {
                if passive[j] && lambda[j] <= tol {
                    passive[j] = false;
                    lambda[j] = 0.0;
                }
            }
            if passive.iter().all(|p| !p) {
                // degenerate step emptied the passive set; let the outer
                // loop re-examine the gradient
                break;
            }
        }
    }
    lambda
}

fn passive_least_squares(v: &Matrix, x: &Vector, passive: &[bool]) -> Vector {
    let idx: Vec<usize> = (0..passive.len()).filter(|&j| passive[j]).collect();
    let mut vp = Matrix::zeros(v.nrows(), idx.len());
    for (col, &j) in idx.iter().enumerate() {
        vp.column_mut(col).copy_from(&v.column(j));
    }
    let sol = vp
        .clone()
        .svd(true, true)
        .solve(x, 1e-13)
        .unwrap_or_else(|_| Vector::zeros(idx.len()));
    let mut z = Vector::zeros(passive.len());
    for (col, &j) in idx.iter().enumerate() {
        z[j] = sol[col];
    }
    z
}
