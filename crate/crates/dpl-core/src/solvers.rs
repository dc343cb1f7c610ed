//! Closed-form dual solutions and the dynamic primal reconstruction.
//!
//! Each solver finds the optimal dual control `(ŷ, v̂)` of
//! `inf x₀y + E[Ũ(Y^{(y,v)}(T))]` and packages closed-form evaluators for
//! the dual state `Y`, the dual adjoints `(p̂₂, q̂₂)`, the reconstructed
//! primal quantities `π̂ = (σᵀ)⁻¹ q̂₂ / p̂₂` and `X̂ = p̂₂`, and the primal
//! adjoints `p̂₁ = −Y`, `q̂₁ = Y(θ + σ⁻¹v̂)`, along any simulated path.
//!
//! The per-cell control always comes from the pointwise minimization of
//! `δ_K(v) + ½‖θ + σ⁻¹v‖²` over the barrier cone; for cone constraints it
//! collapses to the projection `v̂ = σ · proj[−θ | σ⁻¹K̃]`.

use crate::constraints::{ConstraintError, ConstraintSet};
use crate::market::{CellCoefficients, MarketError, MarketModel, MarketTables, PathCells};
use crate::paths::PathBundle;
use crate::utility::UtilityFunction;
use crate::{Matrix, Vector};
use thiserror::Error;

/// Iteration cap of the proximal-gradient minimizer.
pub const MINIMIZER_MAX_ITER: usize = 100_000;
/// Successive-iterate tolerance of the proximal-gradient minimizer.
pub const MINIMIZER_TOL: f64 = 1e-10;
/// Absolute tolerance of the golden-section search in `y`.
pub const GOLDEN_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("power solver requires a cone")]
    RequiresCone,
    #[error("solver requires constant coefficients")]
    RequiresConstantCoefficients,
    #[error("solver requires deterministic coefficients")]
    RequiresDeterministicCoefficients,
    #[error("utility/solver mismatch: expected {expected}")]
    UtilityMismatch { expected: &'static str },
    #[error("market error: {0}")]
    Market(#[from] MarketError),
    #[error("constraint error: {0}")]
    Constraint(#[from] ConstraintError),
    #[error("pointwise dual minimizer did not converge")]
    MinimizerDiverged,
    #[error("bracket does not contain an interior minimum of the dual objective")]
    BracketFailed,
    #[error("dual control has infinite support value")]
    InfiniteSupport,
}

/// Optimal dual control data of one grid cell.
#[derive(Debug, Clone)]
pub struct CellControl {
    /// `v̂`
    pub v_hat: Vector,
    /// `θ̂ = θ + σ⁻¹ v̂`
    pub theta_hat: Vector,
    /// `δ_K(v̂)`; identically zero for cone constraints.
    pub support_v: f64,
    /// `(σᵀ)⁻¹ θ̂`, the direction of the reconstructed portfolio.
    pub pi_dir: Vector,
}

#[derive(Debug, Clone, Copy)]
enum SolutionKind {
    Power { beta: f64 },
    Log,
    NonHara { r: f64, theta_sq: f64, horizon: f64 },
}

/// A solved dual problem with closed-form pathwise evaluators.
#[derive(Debug, Clone)]
pub struct DualSolution {
    utility: UtilityFunction,
    constraint: ConstraintSet,
    kind: SolutionKind,
    /// Per-cell controls; `None` when controls are realized per path
    /// (log utility with random coefficients).
    controls: Option<Vec<CellControl>>,
    pub y_hat: f64,
    /// `x₀ŷ + E[Ũ(Y(T))]` in closed form, when available.
    pub dual_value: Option<f64>,
    /// `E[U(X̂(T))]` in closed form, when available.
    pub primal_value: Option<f64>,
}

/// Per-cell controls seen by one evaluated path.
pub enum ControlsRef<'a> {
    Shared(&'a [CellControl]),
    Owned(Vec<CellControl>),
}

impl ControlsRef<'_> {
    pub fn as_slice(&self) -> &[CellControl] {
        match self {
            ControlsRef::Shared(c) => c,
            ControlsRef::Owned(c) => c,
        }
    }
}

/// All closed-form processes evaluated along one path of a bundle.
///
/// State arrays have one entry per grid point; the direction vectors of the
/// `q` and `π̂` processes at grid point `k` live on cell `min(k, M−1)`.
pub struct SolutionPath<'a> {
    pub cells: PathCells<'a>,
    pub controls: ControlsRef<'a>,
    /// Dual state `Y(t_k)`.
    pub y: Vec<f64>,
    /// Dual adjoint `p̂₂(t_k)`; equals the optimal wealth `X̂(t_k)`.
    pub p2: Vec<f64>,
    /// `q̂₂(t_k) = q2_scale[k] · θ̂(cell)`.
    pub q2_scale: Vec<f64>,
    /// `π̂(t_k) = pi_scale[k] · pi_dir(cell)`.
    pub pi_scale: Vec<f64>,
}

impl SolutionPath<'_> {
    pub fn n_points(&self) -> usize {
        self.y.len()
    }

    pub fn cell_index(&self, point: usize) -> usize {
        point.min(self.n_points() - 2)
    }

    pub fn control(&self, point: usize) -> &CellControl {
        &self.controls.as_slice()[self.cell_index(point)]
    }

    /// Optimal wealth `X̂(t_k) = p̂₂(t_k)`.
    pub fn x(&self, point: usize) -> f64 {
        self.p2[point]
    }

    /// Primal adjoint `p̂₁(t_k) = −Y(t_k)`.
    pub fn p1(&self, point: usize) -> f64 {
        -self.y[point]
    }

    /// Primal adjoint direction: `q̂₁(t_k) = Y(t_k) · θ̂(cell)`.
    pub fn q1_scale(&self, point: usize) -> f64 {
        self.y[point]
    }

    /// Materialized portfolio vector at a grid point.
    pub fn pi_vec(&self, point: usize) -> Vector {
        self.pi_scale[point] * &self.control(point).pi_dir
    }

    /// Portfolio per cell (left endpoints), as used for re-simulation.
    pub fn pi_per_cell(&self) -> Vec<Vector> {
        (0..self.n_points() - 1).map(|k| self.pi_vec(k)).collect()
    }
}

impl DualSolution {
    pub fn utility(&self) -> UtilityFunction {
        self.utility
    }

    pub fn constraint(&self) -> &ConstraintSet {
        &self.constraint
    }

    /// Per-cell controls, unless they are realized per path.
    pub fn controls(&self) -> Option<&[CellControl]> {
        self.controls.as_deref()
    }

    /// Reconstructed portfolio per cell at the initial state. For power and
    /// log utilities this is the portfolio process itself; for the
    /// non-HARA utility the portfolio moves with the dual state and this is
    /// its `t = 0` value.
    pub fn initial_portfolios(&self) -> Option<Vec<Vector>> {
        let controls = self.controls.as_deref()?;
        let scale0 = match self.kind {
            SolutionKind::Power { beta } => 1.0 / (1.0 - beta),
            SolutionKind::Log => 1.0,
            SolutionKind::NonHara {
                r,
                theta_sq,
                horizon,
            } => {
                let (a0, b0) = nonhara_growth(r, theta_sq, horizon);
                let y4 = self.y_hat.powi(-4) * a0;
                let y2 = self.y_hat.powi(-2) * b0;
                (4.0 * y4 + 2.0 * y2) / (y4 + y2)
            }
        };
        Some(controls.iter().map(|c| scale0 * &c.pi_dir).collect())
    }

    /// Evaluates every closed-form process along one path of the bundle.
    pub fn evaluate_path<'a>(
        &'a self,
        tables: &'a MarketTables,
        bundle: &PathBundle,
        path: usize,
    ) -> Result<SolutionPath<'a>, SolveError> {
        let cells = tables.path_cells(bundle.seed(), path);
        let controls = match &self.controls {
            Some(c) => ControlsRef::Shared(c.as_slice()),
            None => ControlsRef::Owned(per_path_controls(&self.constraint, cells.as_slice())?),
        };

        let m = tables.n_steps();
        let mut y = vec![0.0; m + 1];
        let mut p2 = vec![0.0; m + 1];
        let mut q2_scale = vec![0.0; m + 1];
        let mut pi_scale = vec![0.0; m + 1];
        y[0] = self.y_hat;

        match self.kind {
            SolutionKind::Power { beta } => {
                let c1 = (1.0 - 2.0 * beta) / (2.0 * (1.0 - beta) * (1.0 - beta));
                let c2 = 1.0 / (1.0 - beta);
                p2[0] = tables.x0;
                for k in 0..m {
                    let cell = &cells.as_slice()[k];
                    let ctrl = &controls.as_slice()[k];
                    let th_dw = dot_with(&ctrl.theta_hat, bundle.dw(path, k));
                    let th_sq = ctrl.theta_hat.norm_squared();
                    y[k + 1] =
                        y[k] * (-(cell.r + ctrl.support_v + 0.5 * th_sq) * cell.dt - th_dw).exp();
                    p2[k + 1] = p2[k] * ((cell.r + c1 * th_sq) * cell.dt + c2 * th_dw).exp();
                    q2_scale[k] = c2 * p2[k];
                    pi_scale[k] = c2;
                }
                q2_scale[m] = c2 * p2[m];
                pi_scale[m] = c2;
            }
            SolutionKind::Log => {
                p2[0] = 1.0 / y[0];
                for k in 0..m {
                    let cell = &cells.as_slice()[k];
                    let ctrl = &controls.as_slice()[k];
                    let th_dw = dot_with(&ctrl.theta_hat, bundle.dw(path, k));
                    let th_sq = ctrl.theta_hat.norm_squared();
                    y[k + 1] =
                        y[k] * (-(cell.r + ctrl.support_v + 0.5 * th_sq) * cell.dt - th_dw).exp();
                    p2[k + 1] = 1.0 / y[k + 1];
                    q2_scale[k] = p2[k];
                    pi_scale[k] = 1.0;
                }
                q2_scale[m] = p2[m];
                pi_scale[m] = 1.0;
            }
            SolutionKind::NonHara {
                r,
                theta_sq,
                horizon,
            } => {
                let state = |yv: f64, t: f64| {
                    let (a, b) = nonhara_growth(r, theta_sq, horizon - t);
                    let y4 = yv.powi(-4) * a;
                    let y2 = yv.powi(-2) * b;
                    (y4 + y2, 4.0 * y4 + 2.0 * y2)
                };
                let grid = &tables.grid;
                let (p20, q20) = state(y[0], 0.0);
                p2[0] = p20;
                q2_scale[0] = q20;
                pi_scale[0] = q20 / p20;
                for k in 0..m {
                    let cell = &cells.as_slice()[k];
                    let ctrl = &controls.as_slice()[k];
                    let th_dw = dot_with(&ctrl.theta_hat, bundle.dw(path, k));
                    let th_sq = ctrl.theta_hat.norm_squared();
                    y[k + 1] =
                        y[k] * (-(cell.r + ctrl.support_v + 0.5 * th_sq) * cell.dt - th_dw).exp();
                    let (p2k, q2k) = state(y[k + 1], grid[k + 1]);
                    p2[k + 1] = p2k;
                    q2_scale[k + 1] = q2k;
                    pi_scale[k + 1] = q2k / p2k;
                }
            }
        }

        Ok(SolutionPath {
            cells,
            controls,
            y,
            p2,
            q2_scale,
            pi_scale,
        })
    }
}

fn dot_with(v: &Vector, dw: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (a, b) in v.iter().zip(dw) {
        acc += a * b;
    }
    acc
}

/// `(e^{(3r + 6θ̂²)τ}, e^{(r + θ̂²)τ})`: deterministic growth factors of the
/// two terms of the non-HARA dual value function over remaining time `τ`.
fn nonhara_growth(r: f64, theta_sq: f64, tau: f64) -> (f64, f64) {
    (
        ((3.0 * r + 6.0 * theta_sq) * tau).exp(),
        ((r + theta_sq) * tau).exp(),
    )
}

/// Minimizes `δ_K(v) + ½‖θ + σ⁻¹v‖²` over the barrier cone of `K`.
///
/// For cone constraints the minimizer is `v̂ = σ · proj[−θ | σ⁻¹K̃]`.
/// Otherwise a proximal-gradient iteration with fixed step `1/L`,
/// `L = λ_max((σ⁻¹)ᵀσ⁻¹)`, runs until successive iterates differ by less
/// than [`MINIMIZER_TOL`].
pub fn pointwise_dual_minimizer(
    k_set: &ConstraintSet,
    sigma: &Matrix,
    theta: &Vector,
) -> Result<Vector, SolveError> {
    if k_set.is_cone() {
        let u = k_set.project_scaled_barrier_cone(sigma, &(-theta))?;
        return Ok(sigma * u);
    }
    let sigma_inv = sigma
        .clone()
        .try_inverse()
        .ok_or(ConstraintError::SingularSigma)?;
    let gram = sigma_inv.transpose() * &sigma_inv;
    let lip = nalgebra::linalg::SymmetricEigen::new(gram)
        .eigenvalues
        .iter()
        .copied()
        .fold(0.0_f64, f64::max);
    let step = 1.0 / lip;

    let mut v = Vector::zeros(theta.len());
    for _ in 0..MINIMIZER_MAX_ITER {
        let grad = sigma_inv.transpose() * (theta + &sigma_inv * &v);
        let w = &v - step * grad;
        // δ_K is the support function of −K, so its prox projects onto −K:
        // prox_{tδ}(w) = w − t·proj_{−K}(w/t) = w + t·proj_K(−w/t)
        let next = &w + step * k_set.project(&(-&w / step))?;
        let delta = (&next - &v).norm();
        v = next;
        if delta < MINIMIZER_TOL {
            return Ok(v);
        }
    }
    Err(SolveError::MinimizerDiverged)
}

fn per_path_controls(
    k_set: &ConstraintSet,
    cells: &[CellCoefficients],
) -> Result<Vec<CellControl>, SolveError> {
    cells.iter().map(|cell| cell_control(k_set, cell)).collect()
}

fn cell_control(k_set: &ConstraintSet, cell: &CellCoefficients) -> Result<CellControl, SolveError> {
    let v_hat = pointwise_dual_minimizer(k_set, &cell.sigma, &cell.theta)?;
    let theta_hat = &cell.theta + &cell.sigma_inv * &v_hat;
    let support_v = if k_set.is_cone() {
        // cones have {0, ∞}-valued support and v̂ lies in the barrier cone
        0.0
    } else {
        k_set
            .support(&v_hat)
            .finite()
            .ok_or(SolveError::InfiniteSupport)?
    };
    let pi_dir = &cell.sigma_inv_t * &theta_hat;
    Ok(CellControl {
        v_hat,
        theta_hat,
        support_v,
        pi_dir,
    })
}

fn deterministic_tables(m: &MarketModel) -> Result<MarketTables, SolveError> {
    if m.is_random() {
        return Err(SolveError::RequiresDeterministicCoefficients);
    }
    Ok(m.tables()?)
}

/// Solves the dual problem for power utility `U(x) = x^β/β` on a cone.
///
/// The optimal control is the cone projection per cell, and
/// `ŷ = x₀^{β−1} exp{(1−β)∫₀ᵀ [β/(2(β−1)²)‖θ̂‖² − β/(β−1) r] ds}`.
pub fn solve_power(
    m: &MarketModel,
    k_set: &ConstraintSet,
    beta: f64,
) -> Result<DualSolution, SolveError> {
    let utility = UtilityFunction::power(beta).map_err(|_| SolveError::UtilityMismatch {
        expected: "power beta in (0,1)",
    })?;
    if !k_set.is_cone() {
        return Err(SolveError::RequiresCone);
    }
    let tables = deterministic_tables(m)?;
    let controls: Vec<CellControl> = tables
        .cells
        .iter()
        .map(|cell| cell_control(k_set, cell))
        .collect::<Result<_, _>>()?;

    let x0 = m.x0();
    let bm1 = beta - 1.0;
    let mut objective_int = 0.0; // ∫ [β/(2(β−1)²)‖θ̂‖² − β/(β−1) r] ds
    let mut mu_int = 0.0; // ∫ (r + ½‖θ̂‖²) ds
    let mut s2_int = 0.0; // ∫ ‖θ̂‖² ds
    let mut r_int = 0.0;
    for (cell, ctrl) in tables.cells.iter().zip(&controls) {
        let th_sq = ctrl.theta_hat.norm_squared();
        objective_int += (beta / (2.0 * bm1 * bm1) * th_sq - beta / bm1 * cell.r) * cell.dt;
        mu_int += (cell.r + 0.5 * th_sq) * cell.dt;
        s2_int += th_sq * cell.dt;
        r_int += cell.r * cell.dt;
    }
    let y_hat = x0.powf(bm1) * ((1.0 - beta) * objective_int).exp();

    // E[Ũ(Y_T)] for lognormal Y_T with log-mean ln ŷ − μ and log-variance s²
    let m_exp = beta / bm1;
    let conj_mean = (1.0 - beta) / beta
        * y_hat.powf(m_exp)
        * (m_exp * (-mu_int) + 0.5 * m_exp * m_exp * s2_int).exp();
    let dual_value = x0 * y_hat + conj_mean;
    let primal_value =
        x0.powf(beta) / beta * (beta * r_int + beta / (2.0 * (1.0 - beta)) * s2_int).exp();

    Ok(DualSolution {
        utility,
        constraint: k_set.clone(),
        kind: SolutionKind::Power { beta },
        controls: Some(controls),
        y_hat,
        dual_value: Some(dual_value),
        primal_value: Some(primal_value),
    })
}

/// Solves the dual problem for log utility on a general closed convex set.
///
/// `ŷ = 1/x₀` always; the control is the pointwise minimizer per cell, or
/// per path and cell in random-coefficient mode, in which case the closed
/// form values of the primal and dual objectives are not available.
pub fn solve_log(m: &MarketModel, k_set: &ConstraintSet) -> Result<DualSolution, SolveError> {
    let y_hat = 1.0 / m.x0();
    if m.is_random() {
        return Ok(DualSolution {
            utility: UtilityFunction::Log,
            constraint: k_set.clone(),
            kind: SolutionKind::Log,
            controls: None,
            y_hat,
            dual_value: None,
            primal_value: None,
        });
    }
    let tables = m.tables()?;
    let controls: Vec<CellControl> = tables
        .cells
        .iter()
        .map(|cell| cell_control(k_set, cell))
        .collect::<Result<_, _>>()?;

    // E[ln X̂(T)] = ln x₀ + ∫ (r + δ_K(v̂) + ½‖θ̂‖²) ds
    let mut growth = 0.0;
    for (cell, ctrl) in tables.cells.iter().zip(&controls) {
        growth += (cell.r + ctrl.support_v + 0.5 * ctrl.theta_hat.norm_squared()) * cell.dt;
    }
    let primal_value = m.x0().ln() + growth;
    let dual_value = m.x0() * y_hat - 1.0 - y_hat.ln() + growth;

    Ok(DualSolution {
        utility: UtilityFunction::Log,
        constraint: k_set.clone(),
        kind: SolutionKind::Log,
        controls: Some(controls),
        y_hat,
        dual_value: Some(dual_value),
        primal_value: Some(primal_value),
    })
}

/// Solves the dual problem for the non-HARA utility on a cone with constant
/// coefficients.
///
/// `ŷ` is the positive root of `x₀y⁴ − e^{(r+θ̂²)T} y² − e^{(3r+6θ̂²)T} = 0`,
/// in closed form
/// `ŷ = (2x₀)^{−1/2} [e^{(r+θ̂²)T} + √(e^{2(r+θ̂²)T} + 4x₀e^{(3r+6θ̂²)T})]^{1/2}`.
pub fn solve_nonhara(m: &MarketModel, k_set: &ConstraintSet) -> Result<DualSolution, SolveError> {
    if !k_set.is_cone() {
        return Err(SolveError::RequiresCone);
    }
    if !m.has_constant_coefficients() {
        return Err(SolveError::RequiresConstantCoefficients);
    }
    let tables = deterministic_tables(m)?;
    let controls: Vec<CellControl> = tables
        .cells
        .iter()
        .map(|cell| cell_control(k_set, cell))
        .collect::<Result<_, _>>()?;

    let r = tables.cells[0].r;
    let theta_sq = controls[0].theta_hat.norm_squared();
    let horizon = m.horizon();
    let x0 = m.x0();
    let (a0, b0) = nonhara_growth(r, theta_sq, horizon);
    let y_hat = ((b0 + (b0 * b0 + 4.0 * x0 * a0).sqrt()) / (2.0 * x0)).sqrt();

    let dual_value = x0 * y_hat + y_hat.powi(-3) * a0 / 3.0 + y_hat.recip() * b0;
    // E[U(X̂(T))] = (4/3)E[Y(T)⁻³] + 2E[Y(T)⁻¹]
    let primal_value = 4.0 / 3.0 * y_hat.powi(-3) * a0 + 2.0 * y_hat.recip() * b0;

    Ok(DualSolution {
        utility: UtilityFunction::NonHara,
        constraint: k_set.clone(),
        kind: SolutionKind::NonHara {
            r,
            theta_sq,
            horizon,
        },
        controls: Some(controls),
        y_hat,
        dual_value: Some(dual_value),
        primal_value: Some(primal_value),
    })
}

/// Golden-section minimizer of a convex function of `y > 0`, used as the
/// oracle cross-check for every closed-form `ŷ`.
///
/// Pre-scans the bracket on a log-spaced grid to locate an interior
/// minimum, then contracts to absolute tolerance [`GOLDEN_TOL`].
pub fn outer_y_optimize<F>(objective: F, bracket: (f64, f64)) -> Result<f64, SolveError>
where
    F: Fn(f64) -> f64,
{
    let (lo, hi) = bracket;
    assert!(lo > 0.0 && hi > lo, "bracket must satisfy 0 < lo < hi");

    let scan = 512;
    let (lln, lhn) = (lo.ln(), hi.ln());
    let ys: Vec<f64> = (0..=scan)
        .map(|i| (lln + (lhn - lln) * i as f64 / scan as f64).exp())
        .collect();
    let fs: Vec<f64> = ys.iter().map(|&y| objective(y)).collect();
    let mut best = 0;
    for i in 1..=scan {
        if fs[i] < fs[best] {
            best = i;
        }
    }
    if best == 0 || best == scan {
        return Err(SolveError::BracketFailed);
    }

    let (mut a, mut b) = (ys[best - 1], ys[best + 1]);
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (objective(c), objective(d));
    // value comparisons lose signal once the interval shrinks to about
    // sqrt(eps); stop there and finish with one parabolic fit
    let noise_floor = 1e-6 * b.abs().max(1.0);
    while b - a > noise_floor.max(GOLDEN_TOL) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = objective(d);
        }
    }
    let mid = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    if h == 0.0 {
        return Ok(mid);
    }
    let (fa, fm, fb) = (objective(a), objective(mid), objective(b));
    let curvature = fb - 2.0 * fm + fa;
    if curvature <= 0.0 || !curvature.is_finite() {
        return Ok(mid);
    }
    let vertex = mid - h * (fb - fa) / (2.0 * curvature);
    Ok(vertex.clamp(a, b))
}

/// Default outer bracket for `y`; the Inada conditions guarantee an
/// interior minimum of the dual objective inside it for sane inputs.
pub fn default_y_bracket() -> (f64, f64) {
    (1e-6, 1e6)
}
