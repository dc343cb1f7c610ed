//! Convex-duality toolkit for constrained terminal-wealth maximization.
//!
//! The crate solves the dual stochastic control problem of a constrained
//! utility maximizer in closed form (power, log and a non-HARA utility),
//! reconstructs the primal optimal portfolio and wealth process from the
//! dual adjoint processes, and verifies the optimality conditions
//! (forward-backward SDE residuals, normal-cone membership, static dual
//! conditions and weak duality) by pathwise algebra and Monte Carlo on
//! shared Brownian increments.
//!
//! Modules follow the pipeline:
//!
//! * [`market`]: coefficients, non-degeneracy checks, market price of risk;
//! * [`constraints`]: convex constraint sets, support functions, projections;
//! * [`utility`]: utility functions, conjugates, inverse marginals;
//! * [`paths`]: keyed Brownian increments and exact-in-cell SDE schemes;
//! * [`solvers`]: closed-form dual solutions and the primal reconstruction;
//! * [`verify`]: Monte Carlo estimators and optimality-condition residuals.
//!
//! Monte Carlo loops run data-parallel over paths when the `parallel`
//! feature (default) is enabled, and fall back to plain iterators without
//! it. Per-path random streams are keyed by `(seed, path)` and reductions
//! are performed in path-index order, so results are bit-identical for any
//! thread count.

pub mod constraints;
pub mod market;
pub mod paths;
pub mod rng;
pub mod solvers;
pub mod stats;
pub mod utility;
pub mod verify;

/// Dense column vector used for portfolios, controls and coefficients.
pub type Vector = nalgebra::DVector<f64>;
/// Dense matrix used for volatilities and constraint rows.
pub type Matrix = nalgebra::DMatrix<f64>;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n` and collects the results in index order.
///
/// Runs on the current rayon pool when the `parallel` feature is enabled,
/// sequentially otherwise. Output order does not depend on scheduling, so
/// downstream reductions are deterministic.
pub fn map_paths<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}
