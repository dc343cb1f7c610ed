//! Dense tableau simplex for support-function evaluation over polyhedra.
//!
//! Solves `max cᵀπ` over `{π : Aπ ≤ b}` with `b ≥ 0` and free `π`. The
//! split `π = u − w` with slacks gives an all-slack starting basis, so no
//! phase-1 is needed. Bland's rule everywhere keeps pivoting deterministic
//! and cycle-free under degeneracy.

use crate::{Matrix, Vector};

const PIVOT_TOL: f64 = 1e-10;
const MAX_PIVOTS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LpOutcome {
    Optimal(f64),
    Unbounded,
}

/// Maximizes `cᵀπ` subject to `Aπ ≤ b`, `b ≥ 0`.
pub fn maximize_over_polyhedron(c: &Vector, a: &Matrix, b: &Vector) -> Result<LpOutcome, String> {
    let m = a.nrows();
    let n = a.ncols();
    let n_tot = 2 * n + m;

    // tableau rows: [A | -A | I | b]
    let mut t = vec![vec![0.0_f64; n_tot + 1]; m];
    for i in 0..m {
        for j in 0..n {
            t[i][j] = a[(i, j)];
            t[i][n + j] = -a[(i, j)];
        }
        t[i][2 * n + i] = 1.0;
        t[i][n_tot] = b[i];
    }
    let mut cost = vec![0.0_f64; n_tot];
    for j in 0..n {
        cost[j] = c[j];
        cost[n + j] = -c[j];
    }
    let mut basis: Vec<usize> = (2 * n..2 * n + m).collect();

    for _ in 0..MAX_PIVOTS {
        // reduced costs relative to the current basis
        let mut entering = None;
        for j in 0..n_tot {
            let mut rc = cost[j];
            for i in 0..m {
                rc -= cost[basis[i]] * t[i][j];
            }
            if rc > PIVOT_TOL {
                entering = Some(j);
                break; // Bland: smallest improving index
            }
        }
        let Some(j) = entering else {
            let mut value = 0.0;
            for i in 0..m {
                value += cost[basis[i]] * t[i][n_tot];
            }
            return Ok(LpOutcome::Optimal(value));
        };

        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            if t[i][j] > PIVOT_TOL {
                let ratio = t[i][n_tot] / t[i][j];
                let better = match leave {
                    None => true,
                    Some((li, lr)) => {
                        ratio < lr - PIVOT_TOL || (ratio <= lr + PIVOT_TOL && basis[i] < basis[li])
                    }
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
        }
        let Some((pivot_row, _)) = leave else {
            return Ok(LpOutcome::Unbounded);
        };

        let piv = t[pivot_row][j];
        for v in t[pivot_row].iter_mut() {
            *v /= piv;
        }
        for i in 0..m {
            if i != pivot_row && t[i][j].abs() > 0.0 {
                let f = t[i][j];
                for k in 0..=n_tot {
                    t[i][k] -= f * t[pivot_row][k];
                }
            }
        }
        basis[pivot_row] = j;
    }
    Err("simplex failed to terminate".into())
}
