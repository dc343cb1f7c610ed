//! Closed convex constraint sets containing the origin, together with the
//! convex-analysis primitives the duality machinery needs: the support
//! function `δ_K(z) = sup_{π∈K} (−πᵀz)`, the barrier cone
//! `K̃ = {v : δ_K(v) < ∞}`, Euclidean projection and normal-cone tests.
//!
//! Five representations are supported: the full space, the nonnegative
//! orthant, boxes bracketing the origin, polyhedral cones `{π : Gπ ≤ 0}`
//! and polyhedra `{π : Aπ ≤ c}` with `c ≥ 0`. Support values carry an
//! explicit infinity marker, since conditions of the form `δ_K(v) < ∞`
//! need exact infinity semantics, not large floats.

mod lp;
mod nnls;
mod qp;

use crate::{Matrix, Vector};
use lp::LpOutcome;
use thiserror::Error;

/// Default membership tolerance, in units of the vector norm.
pub const MEMBERSHIP_TOL: f64 = 1e-8;
/// Convergence tolerance of the projection solvers.
pub const SOLVER_TOL: f64 = 1e-10;
const QP_MAX_ITER: usize = 10_000;

#[derive(Debug, Error)]
pub enum ConstraintError {
    #[error("constraint set must contain the origin")]
    OriginExcluded,
    #[error("constraint data must be finite")]
    NonFiniteData,
    #[error("dimension mismatch: set has dimension {expected}, argument has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("K not a cone")]
    NotACone,
    #[error("x not in K")]
    PointNotInSet,
    #[error("singular volatility matrix")]
    SingularSigma,
    #[error("projection solver did not converge")]
    ProjectionFailed,
    #[error("linear program failed: {0}")]
    LpFailed(String),
}

/// Value of a support function: a finite nonnegative number or `+∞`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SupportValue {
    Finite(f64),
    Infinite,
}

impl SupportValue {
    pub fn is_finite(self) -> bool {
        matches!(self, SupportValue::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            SupportValue::Finite(v) => Some(v),
            SupportValue::Infinite => None,
        }
    }

    /// Finite value, or a panic for the `+∞` marker.
    pub fn expect_finite(self) -> f64 {
        self.finite().expect("support value is infinite")
    }
}

/// A closed convex set `K ∋ 0` of admissible portfolios.
#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintSet {
    /// Unconstrained: `K = ℝᴺ`.
    FullSpace { dim: usize },
    /// No short selling: `K = [0, ∞)ᴺ`.
    Orthant { dim: usize },
    /// Entrywise bounds `lower ≤ π ≤ upper` with `lower ≤ 0 ≤ upper`;
    /// entries may be `±∞`.
    Box { lower: Vector, upper: Vector },
    /// `K = {π : Gπ ≤ 0}`.
    PolyhedralCone { gmat: Matrix },
    /// `K = {π : Aπ ≤ c}` with `c ≥ 0`.
    Polyhedron { amat: Matrix, c: Vector },
}

use ConstraintSet::*;

impl ConstraintSet {
    pub fn full_space(dim: usize) -> Self {
        FullSpace { dim }
    }

    pub fn orthant(dim: usize) -> Self {
        Orthant { dim }
    }

    pub fn box_set(lower: Vector, upper: Vector) -> Result<Self, ConstraintError> {
        if lower.len() != upper.len() {
            return Err(ConstraintError::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.iter().chain(upper.iter()).any(|v| v.is_nan()) {
            return Err(ConstraintError::NonFiniteData);
        }
        if lower.iter().any(|&l| l > 0.0) || upper.iter().any(|&u| u < 0.0) {
            return Err(ConstraintError::OriginExcluded);
        }
        Ok(Box { lower, upper })
    }

    pub fn polyhedral_cone(gmat: Matrix) -> Result<Self, ConstraintError> {
        if gmat.iter().any(|v| !v.is_finite()) {
            return Err(ConstraintError::NonFiniteData);
        }
        Ok(PolyhedralCone { gmat })
    }

    pub fn polyhedron(amat: Matrix, c: Vector) -> Result<Self, ConstraintError> {
        if amat.iter().any(|v| !v.is_finite()) || c.iter().any(|v| !v.is_finite()) {
            return Err(ConstraintError::NonFiniteData);
        }
        if amat.nrows() != c.len() {
            return Err(ConstraintError::DimensionMismatch {
                expected: amat.nrows(),
                got: c.len(),
            });
        }
        if c.iter().any(|&ci| ci < 0.0) {
            return Err(ConstraintError::OriginExcluded);
        }
        Ok(Polyhedron { amat, c })
    }

    pub fn dim(&self) -> usize {
        match self {
            FullSpace { dim } | Orthant { dim } => *dim,
            Box { lower, .. } => lower.len(),
            PolyhedralCone { gmat } => gmat.ncols(),
            Polyhedron { amat, .. } => amat.ncols(),
        }
    }

    /// True exactly for the full space, the orthant, polyhedral cones, and
    /// boxes whose finite bounds are all zero.
    pub fn is_cone(&self) -> bool {
        match self {
            FullSpace { .. } | Orthant { .. } | PolyhedralCone { .. } => true,
            Box { lower, upper } => lower
                .iter()
                .chain(upper.iter())
                .all(|&v| v == 0.0 || v.is_infinite()),
            Polyhedron { .. } => false,
        }
    }

    fn check_dim(&self, z: &Vector) -> Result<(), ConstraintError> {
        if z.len() != self.dim() {
            return Err(ConstraintError::DimensionMismatch {
                expected: self.dim(),
                got: z.len(),
            });
        }
        Ok(())
    }

    /// Support function `δ_K(z) = sup_{π∈K} (−πᵀz)`.
    ///
    /// Nonnegative because `0 ∈ K`; `Infinite` marks an unbounded supremum.
    pub fn support(&self, z: &Vector) -> SupportValue {
        debug_assert_eq!(z.len(), self.dim());
        match self {
            FullSpace { .. } => {
                if z.iter().all(|&v| v == 0.0) {
                    SupportValue::Finite(0.0)
                } else {
                    SupportValue::Infinite
                }
            }
            Orthant { .. } => {
                if z.iter().all(|&v| v >= 0.0) {
                    SupportValue::Finite(0.0)
                } else {
                    SupportValue::Infinite
                }
            }
            Box { lower, upper } => {
                let mut total = 0.0;
                for i in 0..z.len() {
                    let zi = z[i];
                    if zi > 0.0 {
                        if lower[i].is_infinite() {
                            return SupportValue::Infinite;
                        }
                        total += -lower[i] * zi;
                    } else if zi < 0.0 {
                        if upper[i].is_infinite() {
                            return SupportValue::Infinite;
                        }
                        total += -upper[i] * zi;
                    }
                }
                SupportValue::Finite(total)
            }
            PolyhedralCone { gmat } => polyhedron_support(gmat, &Vector::zeros(gmat.nrows()), z),
            Polyhedron { amat, c } => polyhedron_support(amat, c, z),
        }
    }

    /// Membership in the barrier cone `K̃ = {v : δ_K(v) < ∞}`.
    pub fn barrier_cone_member(&self, v: &Vector) -> bool {
        self.support(v).is_finite()
    }

    /// Generators of the barrier cone: `K̃ = { Σ λ_j g_j : λ ≥ 0 }`.
    ///
    /// The full space has `K̃ = {0}` and returns no generators.
    pub fn barrier_cone_generators(&self) -> Vec<Vector> {
        let n = self.dim();
        let unit = |i: usize, sign: f64| {
            let mut e = Vector::zeros(n);
            e[i] = sign;
            e
        };
        match self {
            FullSpace { .. } => Vec::new(),
            Orthant { .. } => (0..n).map(|i| unit(i, 1.0)).collect(),
            Box { lower, upper } => {
                let mut gens = Vec::new();
                for i in 0..n {
                    if lower[i].is_finite() {
                        gens.push(unit(i, 1.0));
                    }
                    if upper[i].is_finite() {
                        gens.push(unit(i, -1.0));
                    }
                }
                gens
            }
            PolyhedralCone { gmat } => negated_rows(gmat),
            Polyhedron { amat, .. } => negated_rows(amat),
        }
    }

    /// Euclidean projection `argmin_{p∈K} ‖p − x‖`.
    pub fn project(&self, x: &Vector) -> Result<Vector, ConstraintError> {
        self.check_dim(x)?;
        match self {
            FullSpace { .. } => Ok(x.clone()),
            Orthant { .. } => Ok(x.map(|v| v.max(0.0))),
            Box { lower, upper } => Ok(Vector::from_fn(x.len(), |i, _| {
                x[i].max(lower[i]).min(upper[i])
            })),
            PolyhedralCone { gmat } => qp::project_onto_polyhedron(
                gmat,
                &Vector::zeros(gmat.nrows()),
                x,
                SOLVER_TOL,
                QP_MAX_ITER,
            )
            .map_err(|_| ConstraintError::ProjectionFailed),
            Polyhedron { amat, c } => {
                qp::project_onto_polyhedron(amat, c, x, SOLVER_TOL, QP_MAX_ITER)
                    .map_err(|_| ConstraintError::ProjectionFailed)
            }
        }
    }

    /// Worst constraint violation of `x` in distance units (halfspace
    /// violations are scaled by their row norms); zero inside the set.
    pub fn membership_residual(&self, x: &Vector) -> f64 {
        let row_scaled = |rows: &Matrix, slack: Vector| {
            slack
                .iter()
                .enumerate()
                .map(|(i, &v)| v / rows.row(i).norm().max(f64::MIN_POSITIVE))
                .fold(0.0_f64, f64::max)
        };
        match self {
            FullSpace { .. } => 0.0,
            Orthant { .. } => x.iter().fold(0.0_f64, |a, &v| a.max(-v)),
            Box { lower, upper } => (0..x.len())
                .map(|i| (lower[i] - x[i]).max(x[i] - upper[i]).max(0.0))
                .fold(0.0, f64::max),
            PolyhedralCone { gmat } => row_scaled(gmat, gmat * x),
            Polyhedron { amat, c } => row_scaled(amat, amat * x - c),
        }
    }

    pub fn contains(&self, x: &Vector, tol: f64) -> bool {
        self.membership_residual(x) <= tol
    }

    /// Whether `y` lies in the normal cone `N_K(x)`, i.e.
    /// `sup_{x*∈K} yᵀ(x* − x) ≤ tol`, evaluated as `δ_K(−y) ≤ yᵀx + tol`.
    ///
    /// Errors when `x` itself is farther than `tol` from the set.
    pub fn in_normal_cone(
        &self,
        x: &Vector,
        y: &Vector,
        tol: f64,
    ) -> Result<bool, ConstraintError> {
        self.check_dim(x)?;
        self.check_dim(y)?;
        if !self.contains(x, tol) {
            return Err(ConstraintError::PointNotInSet);
        }
        match self.support(&(-y)) {
            SupportValue::Infinite => Ok(false),
            SupportValue::Finite(s) => Ok(s <= y.dot(x) + tol),
        }
    }

    /// Projection of `point` onto `σ⁻¹K̃ = {σ⁻¹v : δ_K(v) < ∞}`.
    ///
    /// Defined for cone sets only; realized by mapping the barrier-cone
    /// generators through `σ⁻¹` and projecting onto the generated cone.
    pub fn project_scaled_barrier_cone(
        &self,
        sigma: &Matrix,
        point: &Vector,
    ) -> Result<Vector, ConstraintError> {
        if !self.is_cone() {
            return Err(ConstraintError::NotACone);
        }
        self.check_dim(point)?;
        let sigma_inv = sigma
            .clone()
            .try_inverse()
            .ok_or(ConstraintError::SingularSigma)?;
        let generators: Vec<Vector> = self
            .barrier_cone_generators()
            .iter()
            .map(|g| &sigma_inv * g)
            .collect();
        Ok(nnls::project_onto_generated_cone(&generators, point))
    }

    /// Projection onto the polar cone `K° = {y : yᵀx ≤ 0 ∀x ∈ K}`.
    ///
    /// Defined for cone sets only. Together with [`ConstraintSet::project`]
    /// it realizes the Moreau decomposition `x = P_K(x) + P_{K°}(x)`.
    pub fn polar_project(&self, x: &Vector) -> Result<Vector, ConstraintError> {
        if !self.is_cone() {
            return Err(ConstraintError::NotACone);
        }
        self.check_dim(x)?;
        match self {
            FullSpace { .. } => Ok(Vector::zeros(x.len())),
            Orthant { .. } => Ok(x.map(|v| v.min(0.0))),
            Box { lower, upper } => Ok(Vector::from_fn(x.len(), |i, _| {
                match (lower[i] == 0.0, upper[i] == 0.0) {
                    (true, true) => x[i],           // {0}: polar coordinate is free
                    (true, false) => x[i].min(0.0), // [0, ∞)
                    (false, true) => x[i].max(0.0), // (−∞, 0]
                    (false, false) => 0.0,          // ℝ
                }
            })),
            PolyhedralCone { gmat } => {
                // K° is generated by the rows of G
                let gens: Vec<Vector> =
                    (0..gmat.nrows()).map(|i| gmat.row(i).transpose()).collect();
                Ok(nnls::project_onto_generated_cone(&gens, x))
            }
            Polyhedron { .. } => Err(ConstraintError::NotACone),
        }
    }
}

fn negated_rows(m: &Matrix) -> Vec<Vector> {
    (0..m.nrows()).map(|i| -m.row(i).transpose()).collect()
}

fn polyhedron_support(a: &Matrix, c: &Vector, z: &Vector) -> SupportValue {
    match lp::maximize_over_polyhedron(&(-z), a, c) {
        Ok(LpOutcome::Optimal(v)) => SupportValue::Finite(v.max(0.0)),
        Ok(LpOutcome::Unbounded) => SupportValue::Infinite,
        Err(msg) => panic!("support-function LP failed: {msg}"),
    }
}
